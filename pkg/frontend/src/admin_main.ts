import { SurveyApi } from './api.js';
import { startAdminPage } from './admin.js';

const root = document.getElementById('admin');
if (root) {
  const meta = document.querySelector<HTMLMetaElement>('meta[name="api-base"]');
  startAdminPage(root, new SurveyApi(meta?.content ?? ''));
}
