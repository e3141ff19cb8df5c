// Typed client for the survey backend. All state lives server-side; this
// wrapper only shapes requests and surfaces HTTP failures as ApiError.

export interface ImageRef {
  image_id: string;
  url: string;
}

export interface PairPayload {
  done: boolean;
  pair_token?: string;
  left?: ImageRef;
  right?: ImageRef;
}

export interface Demographics {
  location?: 'london' | 'not_london';
  gender?: 'female' | 'male' | 'other';
  activity?: 'high' | 'low';
  source?: 'amt' | 'network';
}

export type Choice = 'left' | 'right' | 'not_comparable' | 'not_shown';

export interface Stats {
  sessions: number;
  images: number;
  votes: Record<Choice, number>;
  total_votes: number;
  games_multiplier: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SurveyApi {
  constructor(
    private base: string = '',
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, `${path} failed with ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  async createSession(): Promise<string> {
    const data = await this.post<{ session_id: string }>('/session', {});
    return data.session_id;
  }

  getPair(sessionId: string): Promise<PairPayload> {
    return this.request<PairPayload>(`/pair?session=${encodeURIComponent(sessionId)}`);
  }

  async postVote(
    sessionId: string,
    pairToken: string,
    choice: Choice,
    clientTs: string,
  ): Promise<number> {
    const data = await this.post<{ vote_id: number }>('/vote', {
      session_id: sessionId,
      pair_token: pairToken,
      choice,
      client_ts: clientTs,
    });
    return data.vote_id;
  }

  async postDemographics(sessionId: string, demographics: Demographics): Promise<void> {
    await this.post<{ ok: boolean }>('/demographics', {
      session_id: sessionId,
      demographics,
    });
  }

  stats(): Promise<Stats> {
    return this.request<Stats>('/admin/stats');
  }
}
