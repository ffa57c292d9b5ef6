// Console entry point: 1 s polling loop, tab switching, panel wiring.

import { CallLog, EngineClient, httpTransport } from './api.js';
import { newContext, poll, renderDashboard, renderManager, renderQueryConsole, renderTimeline, renderToasts, wireManager, wireQueryConsole, wireTimeline } from './views.js';

const POLL_MS = 1000;

const TABS = [
  { id: 'dashboard', label: 'Dashboard' },
  { id: 'timeline', label: 'Routine Timeline' },
  { id: 'query', label: 'Query Console' },
  { id: 'manager', label: 'Manager' },
] as const;

type TabId = (typeof TABS)[number]['id'];

function engineBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get('engine') ?? window.location.origin;
}

function boot(): void {
  const log = new CallLog();
  const client = new EngineClient(httpTransport(engineBaseUrl()), log);
  const ctx = newContext(client);
  let active: TabId = 'dashboard';

  const root = document.getElementById('app')!;

  const render = () => {
    const nav = TABS.map(
      (t) => `<button data-tab="${t.id}" class="tab ${t.id === active ? 'active' : ''}">${t.label}</button>`,
    ).join('');
    const body =
      active === 'dashboard' ? renderDashboard(ctx)
      : active === 'timeline' ? renderTimeline(ctx)
      : active === 'query' ? renderQueryConsole(ctx)
      : renderManager(ctx);
    root.innerHTML = `
      <header><h1>fluidstream console</h1><nav>${nav}</nav></header>
      <main>${body}</main>
      <div id="toasts">${renderToasts(ctx)}</div>
      <footer>
        <button id="export-log">export call log</button>
        <span>${log.records.length} API calls recorded</span>
      </footer>`;
    root.querySelectorAll<HTMLButtonElement>('button.tab').forEach((btn) => {
      btn.addEventListener('click', () => {
        active = btn.dataset.tab as TabId;
        render();
      });
    });
    if (active === 'timeline') wireTimeline(root, ctx, refreshSoon);
    if (active === 'query') wireQueryConsole(root, ctx, render);
    if (active === 'manager') wireManager(root, ctx, refreshSoon);
    document.getElementById('export-log')?.addEventListener('click', () => {
      const blob = new Blob([log.serialize()], { type: 'application/json' });
      const a = document.createElement('a');
      a.href = URL.createObjectURL(blob);
      a.download = 'console-call-log.json';
      a.click();
      URL.revokeObjectURL(a.href);
    });
  };

  const refreshSoon = () => {
    void poll(ctx).then(render);
  };

  refreshSoon();
  setInterval(refreshSoon, POLL_MS);
}

boot();
