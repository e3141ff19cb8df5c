// Minimal progress page: raw counts from /admin/stats, refreshed on a timer.

import { SurveyApi, Stats } from './api.js';

export function renderStats(root: HTMLElement, stats: Stats): void {
  root.innerHTML = '';
  const rows: [string, string | number][] = [
    ['Sessions', stats.sessions],
    ['Images in survey', stats.images],
    ['Total votes', stats.total_votes],
    ['Left', stats.votes.left],
    ['Right', stats.votes.right],
    ['Not comparable', stats.votes.not_comparable],
    ['Not shown', stats.votes.not_shown],
    ['Games multiplier', stats.games_multiplier.toFixed(3)],
  ];
  const table = document.createElement('table');
  for (const [label, value] of rows) {
    const tr = document.createElement('tr');
    const th = document.createElement('th');
    th.textContent = label;
    const td = document.createElement('td');
    td.textContent = String(value);
    tr.append(th, td);
    table.appendChild(tr);
  }
  root.appendChild(table);
}

export function startAdminPage(root: HTMLElement, api: SurveyApi, intervalMs = 5000): void {
  const refresh = async () => {
    try {
      renderStats(root, await api.stats());
    } catch {
      root.textContent = 'Stats unavailable, retrying...';
    }
  };
  void refresh();
  setInterval(() => void refresh(), intervalMs);
}
