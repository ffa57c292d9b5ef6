// Screen rendering. Four panels: dashboard, routine timeline, query console,
// manager. All numbers come straight from engine responses.

import { EngineClient, aggregateSpec, indexSpec, prefilterSpec } from './api.js';
import { areaPair, gauge, lineChart } from './charts.js';
import {
  MetricsSeries,
  PlanPanelModel,
  QueryHistory,
  ToastBin,
  planPanelFromResponse,
  timelineFromDprs,
} from './state.js';
import { timelineSvg } from './timeline.js';
import type { DprInstance, ManagerState, QueryRequest, StreamStatus } from './types.js';

export interface ConsoleContext {
  client: EngineClient;
  metrics: MetricsSeries;
  history: QueryHistory;
  toasts: ToastBin;
  dprs: DprInstance[];
  status: StreamStatus | null;
  manager: ManagerState | null;
  lastPlan: PlanPanelModel | null;
}

export function newContext(client: EngineClient): ConsoleContext {
  return {
    client,
    metrics: new MetricsSeries(),
    history: new QueryHistory(),
    toasts: new ToastBin(),
    dprs: [],
    status: null,
    manager: null,
    lastPlan: null,
  };
}

export async function poll(ctx: ConsoleContext): Promise<void> {
  try {
    ctx.metrics.absorb(await ctx.client.metrics(ctx.metrics.cursor));
    ctx.dprs = await ctx.client.listDprs();
    ctx.status = await ctx.client.streamStatus();
    ctx.manager = await ctx.client.managerState();
  } catch (err) {
    ctx.toasts.push('error', String(err));
  }
}

// --- dashboard ---------------------------------------------------------------

export function renderDashboard(ctx: ConsoleContext): string {
  const status = ctx.status;
  const lagMax = Math.max(status?.watermark ?? 1, 1);
  return `
    <section class="cards">
      <div class="card"><h3>throughput (records / interval)</h3>${lineChart(ctx.metrics.throughputPoints())}</div>
      <div class="card"><h3>budget units consumed (total vs manager)</h3>${areaPair(ctx.metrics.unitsPoints())}</div>
      <div class="card small">
        ${gauge(status?.executor_lag ?? 0, lagMax, 'ingest lag (records)')}
        <dl>
          <dt>hi-watermark</dt><dd>${status?.watermark ?? '-'}</dd>
          <dt>latest event</dt><dd>${status?.latest_event_ts ? new Date(status.latest_event_ts).toISOString() : '-'}</dd>
          <dt>segments</dt><dd>${status?.segment_count ?? '-'}</dd>
          <dt>total units</dt><dd>${ctx.metrics.totals?.units ?? 0}</dd>
        </dl>
      </div>
    </section>`;
}

// --- routine timeline ----------------------------------------------------------

export function renderTimeline(ctx: ConsoleContext): string {
  const model = timelineFromDprs(ctx.dprs, ctx.status?.watermark ?? 0);
  const rows = ctx.dprs
    .map(
      (d) => `
      <tr>
        <td><code>${d.instance_id}</code></td>
        <td>${d.owner}</td>
        <td>${d.status}</td>
        <td>${JSON.stringify(d.coverage)}</td>
        <td>${d.skips}</td>
        <td>${d.status === 'running'
          ? `<button class="stop" data-instance="${d.instance_id}">stop</button>`
          : ''}</td>
      </tr>`,
    )
    .join('');
  return `
    <section>
      ${ctx.dprs.length ? timelineSvg(model) : '<p class="empty">no routines yet</p>'}
      <table class="list">
        <thead><tr><th>instance</th><th>owner</th><th>status</th><th>coverage</th><th>skips</th><th></th></tr></thead>
        <tbody>${rows}</tbody>
      </table>
      <form id="new-dpr" class="inline-form">
        <select name="template">
          <option value="index">hash index on field</option>
          <option value="prefilter">pre-filter field = value</option>
          <option value="aggregate">aggregate group-by under filter</option>
          <option value="json">raw spec JSON</option>
        </select>
        <input name="field" placeholder="field (e.g. repo.id)"/>
        <input name="value" placeholder="value"/>
        <input name="extra" placeholder="group-by / keep fields"/>
        <textarea name="spec" placeholder='{"id": ..., "nodes": [...]}' rows="2"></textarea>
        <button type="submit">start routine</button>
      </form>
    </section>`;
}

export function wireTimeline(root: HTMLElement, ctx: ConsoleContext, refresh: () => void): void {
  root.querySelectorAll<HTMLButtonElement>('button.stop').forEach((btn) => {
    btn.addEventListener('click', async () => {
      try {
        const resp = await ctx.client.stopDpr(btn.dataset.instance!);
        ctx.toasts.push('info', `stopped ${resp.instance_id}, coverage ${JSON.stringify(resp.coverage)}`);
      } catch (err) {
        ctx.toasts.push('error', String(err));
      }
      refresh();
    });
  });
  const form = root.querySelector<HTMLFormElement>('#new-dpr');
  form?.addEventListener('submit', async (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const field = String(data.get('field') ?? '');
    const value = coerce(String(data.get('value') ?? ''));
    const extra = String(data.get('extra') ?? '');
    try {
      const template = String(data.get('template'));
      const spec =
        template === 'index' ? indexSpec(field)
        : template === 'prefilter' ? prefilterSpec(field, value, extra ? extra.split(',').map((s) => s.trim()) : [])
        : template === 'aggregate' ? aggregateSpec(extra, field, value)
        : JSON.parse(String(data.get('spec')));
      const resp = await ctx.client.startDpr(spec);
      ctx.toasts.push('info', `started ${resp.instance_id} at offset ${resp.activation_offset}`);
    } catch (err) {
      ctx.toasts.push('error', String(err));
    }
    refresh();
  });
}

// --- query console ----------------------------------------------------------------

export function renderQueryConsole(ctx: ConsoleContext): string {
  const latest = ctx.history.entries[0];
  const resultRows = latest
    ? latest.response.rows
        .map((r) => `<tr><td>${JSON.stringify(r.key)}</td><td>${r.count}</td></tr>`)
        .join('')
    : '';
  return `
    <section>
      <form id="query-form" class="inline-form">
        <input name="hours" value="2" size="4" title="window hours"/>
        <input name="predicates" placeholder="repo.id=123, type=PushEvent" size="32"/>
        <input name="group_by" value="repo.name" size="14"/>
        <input name="top_k" value="3" size="3"/>
        <button type="submit">run query</button>
      </form>
      ${latest ? `
        <div class="result">
          <p>${latest.response.rows.length} rows in ${latest.response.latency_ms.toFixed(1)} ms
             (matched ${latest.response.stats.matched})</p>
          <table class="list"><thead><tr><th>key</th><th>count</th></tr></thead>
            <tbody>${resultRows}</tbody></table>
          ${renderPlanPanel(ctx.lastPlan)}
        </div>` : '<p class="empty">no queries yet</p>'}
    </section>`;
}

export function renderPlanPanel(plan: PlanPanelModel | null): string {
  if (!plan) return '';
  const rows = plan.rows
    .map(
      (r) => `
      <tr data-part="${r.lo}-${r.hi}">
        <td>[${r.lo}, ${r.hi})</td><td>${r.records}</td><td class="path ${r.path}">${r.path}</td>
        <td>${r.structureId ?? '-'}</td><td>${r.estCost}</td>
        <td><div class="share" style="width:${Math.round(r.costShare * 100)}px"></div>${(r.costShare * 100).toFixed(1)}%</td>
      </tr>`,
    )
    .join('');
  return `
    <div class="plan-panel">
      <h3>stitched plan (est ${plan.estCost} vs all-raw ${plan.allRawCost})</h3>
      <table class="list">
        <thead><tr><th>segment</th><th>records</th><th>path</th><th>structure</th><th>est cost</th><th>share</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>
    </div>`;
}

export function parsePredicates(text: string): { field: string; eq: string | number | boolean }[] {
  return text
    .split(',')
    .map((s) => s.trim())
    .filter(Boolean)
    .map((pair) => {
      const at = pair.indexOf('=');
      if (at < 1) throw new Error(`predicate must look like field=value: ${pair}`);
      return { field: pair.slice(0, at).trim(), eq: coerce(pair.slice(at + 1).trim()) };
    });
}

export function wireQueryConsole(root: HTMLElement, ctx: ConsoleContext, refresh: () => void): void {
  root.querySelector<HTMLFormElement>('#query-form')?.addEventListener('submit', async (ev) => {
    ev.preventDefault();
    const data = new FormData(ev.target as HTMLFormElement);
    try {
      const request: QueryRequest = {
        window: { relative_hours: Number(data.get('hours')) },
        predicates: parsePredicates(String(data.get('predicates') ?? '')),
        group_by: String(data.get('group_by')),
        top_k: Number(data.get('top_k')),
      };
      const response = await ctx.client.query(request);
      ctx.history.push(request, response);
      ctx.lastPlan = planPanelFromResponse(response.plan);
    } catch (err) {
      ctx.toasts.push('error', String(err));
    }
    refresh();
  });
}

// --- manager panel ------------------------------------------------------------------

export function renderManager(ctx: ConsoleContext): string {
  const m = ctx.manager;
  if (!m) return '<p class="empty">manager state unavailable</p>';
  const forecast = m.forecast
    .map((f) => `<tr><td><code>${JSON.stringify(f.template)}</code></td><td>${f.weight}</td></tr>`)
    .join('');
  const candidates = m.candidates
    .map(
      (c) =>
        `<tr><td>${c.spec_id}</td><td>${c.kind}</td><td>${c.cost}</td><td>${c.benefit}</td><td>${c.ratio ?? '-'}</td></tr>`,
    )
    .join('');
  const sel = m.last_selection;
  return `
    <section>
      <p>mode:
        <button id="mode-auto" ${m.mode === 'auto' ? 'class="active"' : ''}>auto</button>
        <button id="mode-manual" ${m.mode === 'manual' ? 'class="active"' : ''}>manual</button>
      </p>
      <h3>forecast</h3>
      <table class="list"><thead><tr><th>template</th><th>weight</th></tr></thead>
        <tbody>${forecast || '<tr><td colspan="2" class="empty">empty</td></tr>'}</tbody></table>
      <h3>candidates</h3>
      <table class="list"><thead><tr><th>routine</th><th>kind</th><th>cost</th><th>benefit</th><th>b/c</th></tr></thead>
        <tbody>${candidates || '<tr><td colspan="5" class="empty">none</td></tr>'}</tbody></table>
      <h3>last selection</h3>
      ${sel
        ? `<p>budget ${sel.budget}, picked ${sel.chosen.length} (cost ${sel.total_cost}, benefit ${sel.total_benefit});
           started ${sel.commands.started.length}, stopped ${sel.commands.stopped.length}</p>`
        : '<p class="empty">no selection yet</p>'}
    </section>`;
}

export function wireManager(root: HTMLElement, ctx: ConsoleContext, refresh: () => void): void {
  for (const mode of ['auto', 'manual'] as const) {
    root.querySelector(`#mode-${mode}`)?.addEventListener('click', async () => {
      try {
        await ctx.client.setManagerMode(mode);
      } catch (err) {
        ctx.toasts.push('error', String(err));
      }
      refresh();
    });
  }
}

export function renderToasts(ctx: ConsoleContext): string {
  return ctx.toasts.toasts
    .map((t) => `<div class="toast ${t.kind}">${t.text}</div>`)
    .join('');
}

function coerce(text: string): string | number | boolean {
  if (text === 'true') return true;
  if (text === 'false') return false;
  if (/^-?\d+$/.test(text)) return Number(text);
  return text;
}
