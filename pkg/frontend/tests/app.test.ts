// @vitest-environment jsdom
//
// Contract tests for the voting UI against a scripted in-memory server
// that mimics the backend's pair/vote state machine.

import { beforeEach, describe, expect, it } from 'vitest';

import { PairPayload, SurveyApi } from '../src/api.js';
import { PROMPT, SurveyApp } from '../src/app.js';
import { bindKeyboard } from '../src/keyboard.js';

type CapturedVote = {
  session_id: string;
  pair_token: string;
  choice: string;
  client_ts?: string;
};

class FakeServer {
  queue: PairPayload[] = [];
  outstanding: PairPayload | null = null;
  votes: CapturedVote[] = [];
  demographics: unknown[] = [];
  voteMode: 'ok' | 'network' | 'hang' | number = 'ok';
  demographicsMode: 'ok' | number = 'ok';
  private hanging: ((resp: Response) => void)[] = [];

  pair(token: string): PairPayload {
    return {
      done: false,
      pair_token: token,
      left: { image_id: `${token}-L`, url: `/images/${token}-L` },
      right: { image_id: `${token}-R`, url: `/images/${token}-R` },
    };
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    if (input.endsWith('/session') && init?.method === 'POST') {
      return json({ session_id: 'sess-1' });
    }
    if (input.includes('/pair')) {
      if (!this.outstanding) {
        this.outstanding = this.queue.shift() ?? null;
      }
      return json(this.outstanding ?? { done: true });
    }
    if (input.endsWith('/vote')) {
      if (this.voteMode === 'network') {
        throw new TypeError('network down');
      }
      if (this.voteMode === 'hang') {
        this.votes.push(body);
        return new Promise<Response>((resolve) => this.hanging.push(resolve));
      }
      if (typeof this.voteMode === 'number') {
        return json({ detail: 'rejected' }, this.voteMode);
      }
      if (!this.outstanding || this.outstanding.pair_token !== body.pair_token) {
        return json({ detail: 'stale token' }, 409);
      }
      this.votes.push(body);
      this.outstanding = null;
      return json({ vote_id: this.votes.length });
    }
    if (input.endsWith('/demographics')) {
      if (typeof this.demographicsMode === 'number') {
        return json({ detail: 'conflict' }, this.demographicsMode);
      }
      this.demographics.push(body);
      return json({ ok: true });
    }
    throw new Error(`unexpected request ${input}`);
  };

  releaseHanging(): void {
    const waiting = this.hanging.splice(0);
    this.outstanding = null;
    waiting.forEach((resolve, i) => resolve(json({ vote_id: 100 + i })));
  }
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

async function flush(times = 6): Promise<void> {
  for (let i = 0; i < times; i += 1) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

let server: FakeServer;
let root: HTMLElement;
let app: SurveyApp;

async function startVoting(pairTokens: string[]): Promise<void> {
  server = new FakeServer();
  server.queue = pairTokens.map((t) => server.pair(t));
  root = document.createElement('div');
  document.body.innerHTML = '';
  document.body.appendChild(root);
  app = new SurveyApp(root, new SurveyApi('', server.fetch));
  await app.start();
  await flush();
  root.querySelector<HTMLButtonElement>('button.skip')!.click();
  await flush();
}

beforeEach(() => {
  document.body.innerHTML = '';
});

describe('voting', () => {
  it('shows the configured prompt and both images side by side', async () => {
    await startVoting(['t1']);
    expect(root.querySelector('.prompt')!.textContent).toBe(PROMPT);
    const imgs = root.querySelectorAll('.pair img');
    expect(imgs.length).toBe(2);
    expect((imgs[0] as HTMLImageElement).src).toContain('t1-L');
    expect((imgs[1] as HTMLImageElement).src).toContain('t1-R');
  });

  it('posts the clicked side with the live pair token', async () => {
    await startVoting(['t1', 't2']);
    root.querySelector<HTMLImageElement>('img[data-side="left"]')!.click();
    await flush();
    expect(server.votes).toHaveLength(1);
    expect(server.votes[0]).toMatchObject({
      session_id: 'sess-1',
      pair_token: 't1',
      choice: 'left',
    });
    expect(server.votes[0].client_ts).toBeTruthy();
    // the next pair rendered only after the ack
    expect(root.querySelector<HTMLImageElement>('img[data-side="left"]')!.src).toContain('t2-L');
  });

  it('posts choice=right for the right image', async () => {
    await startVoting(['t1']);
    root.querySelector<HTMLImageElement>('img[data-side="right"]')!.click();
    await flush();
    expect(server.votes[0]).toMatchObject({ pair_token: 't1', choice: 'right' });
  });

  it('maps arrow keys onto left/right votes', async () => {
    await startVoting(['t1', 't2']);
    const unbind = bindKeyboard(app);
    document.dispatchEvent(new KeyboardEvent('keydown', { key: 'ArrowRight' }));
    await flush();
    document.dispatchEvent(new KeyboardEvent('keydown', { key: 'ArrowLeft' }));
    await flush();
    expect(server.votes.map((v) => [v.pair_token, v.choice])).toEqual([
      ['t1', 'right'],
      ['t2', 'left'],
    ]);
    unbind();
  });

  it('submits not_comparable from the dedicated control', async () => {
    await startVoting(['t1']);
    root.querySelector<HTMLButtonElement>('button.not-comparable')!.click();
    await flush();
    expect(server.votes[0]).toMatchObject({ pair_token: 't1', choice: 'not_comparable' });
  });

  it('posts not_shown automatically when an image fails to load', async () => {
    await startVoting(['t1']);
    const img = root.querySelector<HTMLImageElement>('img[data-side="left"]')!;
    img.dispatchEvent(new Event('error'));
    await flush();
    expect(server.votes).toHaveLength(1);
    expect(server.votes[0]).toMatchObject({ pair_token: 't1', choice: 'not_shown' });
  });

  it('sends a single not_shown when both images fail', async () => {
    await startVoting(['t1']);
    const imgs = root.querySelectorAll('img');
    imgs[0].dispatchEvent(new Event('error'));
    imgs[1].dispatchEvent(new Event('error'));
    await flush();
    expect(server.votes).toHaveLength(1);
  });

  it('suppresses double submission while a vote is in flight', async () => {
    await startVoting(['t1', 't2']);
    server.voteMode = 'hang';
    const img = root.querySelector<HTMLImageElement>('img[data-side="left"]')!;
    img.click();
    img.click();
    root.querySelector<HTMLButtonElement>('button.not-comparable')!.click();
    await flush();
    expect(server.votes).toHaveLength(1);
    server.voteMode = 'ok';
    server.releaseHanging();
    await flush();
  });

  it('ignores stale events from an already-voted pair', async () => {
    await startVoting(['t1', 't2']);
    const oldImg = root.querySelector<HTMLImageElement>('img[data-side="left"]')!;
    oldImg.click();
    await flush();
    oldImg.dispatchEvent(new Event('error')); // detached pair must not vote
    await flush();
    expect(server.votes).toHaveLength(1);
  });

  it('terminates on the completion payload and disables voting', async () => {
    await startVoting(['t1']);
    root.querySelector<HTMLImageElement>('img[data-side="left"]')!.click();
    await flush();
    expect(root.querySelector('.thanks')!.textContent).toContain('1 votes');
    expect(root.querySelectorAll('img')).toHaveLength(0);
    document.dispatchEvent(new KeyboardEvent('keydown', { key: 'ArrowLeft' }));
    await flush();
    expect(server.votes).toHaveLength(1);
  });

  it('shows a retry banner on network failure and never drops the vote', async () => {
    await startVoting(['t1', 't2']);
    server.voteMode = 'network';
    root.querySelector<HTMLImageElement>('img[data-side="left"]')!.click();
    await flush();
    const banner = root.querySelector<HTMLElement>('.banner')!;
    expect(banner.hidden).toBe(false);
    expect(server.votes).toHaveLength(0);
    server.voteMode = 'ok';
    banner.querySelector<HTMLButtonElement>('button.retry')!.click();
    await flush();
    expect(server.votes).toHaveLength(1);
    expect(server.votes[0]).toMatchObject({ pair_token: 't1', choice: 'left' });
  });

  it('counts votes in the progress indicator', async () => {
    await startVoting(['t1', 't2', 't3']);
    root.querySelector<HTMLImageElement>('img[data-side="left"]')!.click();
    await flush();
    root.querySelector<HTMLImageElement>('img[data-side="right"]')!.click();
    await flush();
    expect(root.querySelector('.progress')!.textContent).toBe('2 votes cast');
  });
});

describe('demographics form', () => {
  async function startAtForm(): Promise<void> {
    server = new FakeServer();
    server.queue = [server.pair('t1')];
    root = document.createElement('div');
    document.body.appendChild(root);
    app = new SurveyApp(root, new SurveyApi('', server.fetch));
    await app.start();
    await flush();
  }

  it('skip submits nothing and proceeds to voting', async () => {
    await startAtForm();
    root.querySelector<HTMLButtonElement>('button.skip')!.click();
    await flush();
    expect(server.demographics).toHaveLength(0);
    expect(root.querySelectorAll('.pair img')).toHaveLength(2);
  });

  it('submits only the selected enumerated values', async () => {
    await startAtForm();
    root.querySelector<HTMLSelectElement>('select[name="location"]')!.value = 'london';
    root.querySelector<HTMLSelectElement>('select[name="activity"]')!.value = 'high';
    root.querySelector('form')!.dispatchEvent(new Event('submit', { cancelable: true }));
    await flush();
    expect(server.demographics).toHaveLength(1);
    expect(server.demographics[0]).toMatchObject({
      session_id: 'sess-1',
      demographics: { location: 'london', activity: 'high' },
    });
    expect(root.querySelectorAll('.pair img')).toHaveLength(2);
  });

  it('guards against double submission', async () => {
    await startAtForm();
    root.querySelector<HTMLSelectElement>('select[name="location"]')!.value = 'london';
    const form = root.querySelector('form')!;
    form.dispatchEvent(new Event('submit', { cancelable: true }));
    form.dispatchEvent(new Event('submit', { cancelable: true }));
    await flush();
    expect(server.demographics).toHaveLength(1);
  });

  it('surfaces server rejection inline and re-enables the buttons', async () => {
    await startAtForm();
    server.demographicsMode = 409;
    root.querySelector<HTMLSelectElement>('select[name="location"]')!.value = 'london';
    root.querySelector('form')!.dispatchEvent(new Event('submit', { cancelable: true }));
    await flush();
    expect(root.querySelector('.form-error')!.textContent).toContain('409');
    expect(root.querySelector<HTMLButtonElement>('button.skip')!.disabled).toBe(false);
    expect(root.querySelectorAll('.pair img')).toHaveLength(0);
  });

  it('submitting with no selections behaves like skip', async () => {
    await startAtForm();
    root.querySelector('form')!.dispatchEvent(new Event('submit', { cancelable: true }));
    await flush();
    expect(server.demographics).toHaveLength(0);
    expect(root.querySelectorAll('.pair img')).toHaveLength(2);
  });
});
