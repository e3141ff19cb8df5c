// Voting screen state machine. One pair is outstanding at a time, exactly
// one vote is sent per served pair, and nothing is posted without the live
// pair token. The next pair renders only after the vote acknowledgement.

import { ApiError, Choice, Demographics, PairPayload, SurveyApi } from './api.js';
import { renderDemographicsForm } from './demographics.js';

export const PROMPT = 'On which street would you prefer to walk?';

type Phase = 'init' | 'demographics' | 'voting' | 'done';

export class SurveyApp {
  phase: Phase = 'init';
  sessionId = '';
  votesCast = 0;

  private pair: PairPayload | null = null;
  private inFlight = false;
  private pendingVote: { token: string; choice: Choice; clientTs: string } | null = null;

  private prompt: HTMLHeadingElement;
  private progress: HTMLElement;
  private banner: HTMLElement;
  private stage: HTMLElement;

  constructor(private root: HTMLElement, private api: SurveyApi) {
    this.root.innerHTML = '';
    this.prompt = document.createElement('h1');
    this.prompt.className = 'prompt';
    this.prompt.textContent = PROMPT;
    this.progress = document.createElement('div');
    this.progress.className = 'progress';
    this.banner = document.createElement('div');
    this.banner.className = 'banner';
    this.banner.hidden = true;
    this.stage = document.createElement('div');
    this.stage.className = 'stage';
    this.root.append(this.prompt, this.progress, this.banner, this.stage);
  }

  async start(): Promise<void> {
    this.sessionId = await this.api.createSession();
    this.phase = 'demographics';
    this.renderDemographics();
  }

  private renderDemographics(): void {
    this.stage.innerHTML = '';
    this.stage.appendChild(
      renderDemographicsForm(
        (demographics) => this.submitDemographics(demographics),
        () => this.beginVoting(),
      ),
    );
  }

  private async submitDemographics(demographics: Demographics): Promise<void> {
    try {
      await this.api.postDemographics(this.sessionId, demographics);
      this.beginVoting();
    } catch (err) {
      const field = this.stage.querySelector<HTMLElement>('.form-error');
      if (field) {
        field.textContent =
          err instanceof ApiError ? `Could not save (${err.status}).` : 'Could not save.';
      }
      this.stage
        .querySelectorAll('button')
        .forEach((b) => ((b as HTMLButtonElement).disabled = false));
    }
  }

  beginVoting(): void {
    this.phase = 'voting';
    void this.nextPair();
  }

  private async nextPair(): Promise<void> {
    this.hideBanner();
    try {
      const pair = await this.api.getPair(this.sessionId);
      if (pair.done) {
        this.renderDone();
        return;
      }
      this.pair = pair;
      this.renderPair(pair);
    } catch (err) {
      this.showBanner('Could not load the next pair.', () => void this.nextPair());
    }
  }

  private renderPair(pair: PairPayload): void {
    const token = pair.pair_token as string;
    this.stage.innerHTML = '';
    this.updateProgress();

    const row = document.createElement('div');
    row.className = 'pair';
    for (const side of ['left', 'right'] as const) {
      const ref = pair[side]!;
      const img = document.createElement('img');
      img.src = ref.url;
      img.alt = `street view ${side}`;
      img.dataset.side = side;
      img.addEventListener('click', () => void this.vote(token, side));
      // a broken image is an automatic "not shown" for the pair
      img.addEventListener('error', () => void this.vote(token, 'not_shown'));
      row.appendChild(img);
    }
    this.stage.appendChild(row);

    const skip = document.createElement('button');
    skip.className = 'not-comparable';
    skip.textContent = "Can't compare";
    skip.addEventListener('click', () => void this.vote(token, 'not_comparable'));
    this.stage.appendChild(skip);
  }

  handleKey(key: string): void {
    if (this.phase !== 'voting' || !this.pair) {
      return;
    }
    const token = this.pair.pair_token as string;
    if (key === 'ArrowLeft') {
      void this.vote(token, 'left');
    } else if (key === 'ArrowRight') {
      void this.vote(token, 'right');
    }
  }

  async vote(token: string, choice: Choice): Promise<void> {
    // one vote per served pair: drop anything stale or concurrent
    if (this.inFlight || !this.pair || this.pair.pair_token !== token) {
      return;
    }
    this.inFlight = true;
    this.setInputsDisabled(true);
    const payload = { token, choice, clientTs: new Date().toISOString() };
    await this.send(payload);
  }

  private async send(payload: { token: string; choice: Choice; clientTs: string }): Promise<void> {
    this.pendingVote = payload;
    try {
      await this.api.postVote(this.sessionId, payload.token, payload.choice, payload.clientTs);
      this.pendingVote = null;
      this.pair = null;
      this.inFlight = false;
      this.votesCast += 1;
      await this.nextPair();
    } catch (err) {
      if (err instanceof ApiError) {
        // conflict or validation failure: the server no longer accepts this
        // token, so resync with its outstanding pair instead of retrying
        this.pendingVote = null;
        this.pair = null;
        this.inFlight = false;
        await this.nextPair();
        return;
      }
      // network failure: never drop the vote silently; offer a retry
      this.showBanner('Network problem, your vote was not recorded yet.', () => {
        if (this.pendingVote) {
          void this.send(this.pendingVote);
        }
      });
    }
  }

  private renderDone(): void {
    this.phase = 'done';
    this.pair = null;
    this.stage.innerHTML = '';
    const thanks = document.createElement('div');
    thanks.className = 'thanks';
    thanks.textContent = `All done, thank you! You cast ${this.votesCast} votes.`;
    this.stage.appendChild(thanks);
    this.updateProgress();
  }

  private updateProgress(): void {
    this.progress.textContent = `${this.votesCast} votes cast`;
  }

  private setInputsDisabled(disabled: boolean): void {
    this.stage.querySelectorAll('button').forEach((b) => {
      (b as HTMLButtonElement).disabled = disabled;
    });
    this.stage.querySelectorAll('img').forEach((img) => {
      img.classList.toggle('disabled', disabled);
    });
  }

  private showBanner(message: string, retry: () => void): void {
    this.banner.hidden = false;
    this.banner.innerHTML = '';
    const text = document.createElement('span');
    text.textContent = message;
    const button = document.createElement('button');
    button.className = 'retry';
    button.textContent = 'Retry';
    button.addEventListener('click', () => {
      this.hideBanner();
      retry();
    });
    this.banner.append(text, button);
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.banner.innerHTML = '';
  }
}
