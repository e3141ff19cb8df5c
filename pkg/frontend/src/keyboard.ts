// Arrow keys mirror the image clicks for faster voting.

import { SurveyApp } from './app.js';

export function bindKeyboard(app: SurveyApp, target: Document = document): () => void {
  const handler = (event: KeyboardEvent) => {
    if (event.key === 'ArrowLeft' || event.key === 'ArrowRight') {
      event.preventDefault();
      app.handleKey(event.key);
    }
  };
  target.addEventListener('keydown', handler);
  return () => target.removeEventListener('keydown', handler);
}
