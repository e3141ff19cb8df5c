import { SurveyApi } from './api.js';
import { SurveyApp } from './app.js';
import { bindKeyboard } from './keyboard.js';

function apiBase(): string {
  const meta = document.querySelector<HTMLMetaElement>('meta[name="api-base"]');
  return meta?.content ?? '';
}

const root = document.getElementById('app');
if (root) {
  const app = new SurveyApp(root, new SurveyApi(apiBase()));
  bindKeyboard(app);
  void app.start().catch(() => {
    root.textContent = 'Could not reach the survey server. Please reload.';
  });
}
