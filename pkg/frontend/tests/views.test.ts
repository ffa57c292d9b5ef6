import { describe, expect, it } from 'vitest';
import { readFileSync } from 'node:fs';
import { fileURLToPath } from 'node:url';

import { areaPair, gauge, lineChart } from '../src/charts.js';
import { planPanelFromResponse, ToastBin } from '../src/state.js';
import { parsePredicates, renderPlanPanel } from '../src/views.js';
import type { QueryResponse } from '../src/types.js';

const fixtures = JSON.parse(
  readFileSync(fileURLToPath(new URL('./fixtures/engine-responses.json', import.meta.url)), 'utf8'),
);

describe('predicate parsing', () => {
  it('parses comma-separated equality pairs with type coercion', () => {
    expect(parsePredicates('repo.id=123, type=PushEvent')).toEqual([
      { field: 'repo.id', eq: 123 },
      { field: 'type', eq: 'PushEvent' },
    ]);
  });

  it('handles empty input and rejects junk', () => {
    expect(parsePredicates('')).toEqual([]);
    expect(() => parsePredicates('nonsense')).toThrow(/field=value/);
  });

  it('keeps values containing = intact after the first separator', () => {
    expect(parsePredicates('msg=a=b')).toEqual([{ field: 'msg', eq: 'a=b' }]);
  });
});

describe('plan panel markup', () => {
  it('renders one row per stitched segment with its path and share', () => {
    const response = fixtures.query_response as QueryResponse;
    const html = renderPlanPanel(planPanelFromResponse(response.plan));
    for (const part of response.plan.parts) {
      expect(html).toContain(`data-part="${part.lo}-${part.hi}"`);
      expect(html).toContain(part.path);
    }
    expect(html).toContain(`est ${response.plan.est_cost}`);
  });

  it('renders nothing without a plan', () => {
    expect(renderPlanPanel(null)).toBe('');
  });
});

describe('charts', () => {
  it('render empty states without throwing', () => {
    expect(lineChart([])).toContain('no data yet');
    expect(areaPair([])).toContain('no data yet');
    expect(gauge(0, 0, 'lag')).toContain('lag');
  });

  it('plot every point of a series', () => {
    const svg = lineChart([{ x: 0, y: 1 }, { x: 1, y: 5 }, { x: 2, y: 2 }]);
    expect((svg.match(/[ML]/g) ?? []).length).toBe(3);
  });
});

describe('toasts', () => {
  it('keeps the five most recent, newest first', () => {
    const bin = new ToastBin();
    for (let i = 0; i < 8; i++) bin.push('info', `t${i}`, i);
    expect(bin.toasts.length).toBe(5);
    expect(bin.toasts[0].text).toBe('t7');
  });
});

describe('empty engine', () => {
  it('all panels render empty states without error', async () => {
    const { newContext, renderDashboard, renderTimeline, renderQueryConsole, renderManager } =
      await import('../src/views.js');
    const { EngineClient } = await import('../src/api.js');
    const ctx = newContext(new EngineClient(async () => ({})));
    for (const render of [renderDashboard, renderTimeline, renderQueryConsole, renderManager]) {
      const html = render(ctx);
      expect(typeof html).toBe('string');
      expect(html.length).toBeGreaterThan(0);
    }
    expect(renderTimeline(ctx)).toContain('no routines yet');
    expect(renderQueryConsole(ctx)).toContain('no queries yet');
  });
});
