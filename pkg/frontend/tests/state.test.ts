import { describe, expect, it } from 'vitest';
import { readFileSync } from 'node:fs';
import { fileURLToPath } from 'node:url';

import {
  MetricsSeries,
  planPanelFromResponse,
  panelSegments,
  renderedIntervals,
  timelineFromDprs,
} from '../src/state.js';
import { intervalsFromSvg, timelineSvg } from '../src/timeline.js';
import type { DprInstance, MetricsResponse, QueryResponse, StreamStatus } from '../src/types.js';

const fixtures = JSON.parse(
  readFileSync(fileURLToPath(new URL('./fixtures/engine-responses.json', import.meta.url)), 'utf8'),
);

const dprs = fixtures.dprs as DprInstance[];
const status = fixtures.status as StreamStatus;
const queryResponse = fixtures.query_response as QueryResponse;

describe('timeline model', () => {
  it('mirrors engine coverage byte for byte', () => {
    const model = timelineFromDprs(dprs, status.watermark);
    const rendered = renderedIntervals(model);
    for (const d of dprs) {
      expect(JSON.stringify(rendered[d.instance_id])).toBe(JSON.stringify(d.coverage));
    }
    expect(Object.keys(rendered).length).toBe(dprs.length);
  });

  it('round-trips coverage through the rendered svg markup', () => {
    const model = timelineFromDprs(dprs, status.watermark);
    const svg = timelineSvg(model);
    const fromSvg = intervalsFromSvg(svg);
    for (const d of dprs) {
      if (d.coverage.length === 0) continue; // nothing to draw for empty coverage
      expect(fromSvg[d.instance_id]).toEqual(d.coverage);
    }
  });

  it('spans at least the watermark', () => {
    const model = timelineFromDprs(dprs, status.watermark);
    expect(model.maxOffset).toBeGreaterThanOrEqual(status.watermark);
    expect(model.minOffset).toBe(0);
  });
});

describe('plan panel model', () => {
  it('segments equal the /query response plan parts', () => {
    const model = planPanelFromResponse(queryResponse.plan);
    expect(panelSegments(model)).toEqual(queryResponse.plan.parts);
    expect(model.estCost).toBe(queryResponse.plan.est_cost);
  });

  it('keeps the stitched raw+probe shape from the fixture', () => {
    const model = planPanelFromResponse(queryResponse.plan);
    expect(model.rows.map((r) => r.path)).toEqual(['raw_scan', 'index_probe']);
    expect(model.rows[0].hi).toBe(model.rows[1].lo);
  });
});

describe('metrics series', () => {
  it('absorbs cursor-disjoint polls into one contiguous series', () => {
    const series = new MetricsSeries();
    series.absorb(fixtures.metrics_first as MetricsResponse);
    const firstLen = series.intervals.length;
    series.absorb(fixtures.metrics_second as MetricsResponse);
    expect(series.intervals.length).toBeGreaterThanOrEqual(firstLen);
    const buckets = series.intervals.map((iv) => iv.bucket);
    expect([...buckets].sort((a, b) => a - b)).toEqual(buckets);
    expect(new Set(buckets).size).toBe(buckets.length);
  });

  it('rejects a bucket that goes backwards', () => {
    const series = new MetricsSeries();
    const resp = structuredClone(fixtures.metrics_first) as MetricsResponse;
    series.absorb(resp);
    expect(() => series.absorb(resp)).toThrow(/backwards/);
  });

  it('caps retained points', () => {
    const series = new MetricsSeries(10);
    for (let i = 0; i < 30; i++) {
      series.absorb({
        cursor: i,
        intervals: [{ bucket: i, start_ms: i * 1000, ingested: 1, units: 0, units_by_owner: {} }],
        totals: fixtures.metrics_first.totals,
      });
    }
    expect(series.intervals.length).toBe(10);
    expect(series.intervals[0].bucket).toBe(20);
  });
});

describe('stop response fidelity', () => {
  it('bar for a stopped routine closes at the DELETE response coverage end', () => {
    const stop = fixtures.stop_response as { instance_id: string; coverage: [number, number][] };
    const model = timelineFromDprs(dprs, status.watermark);
    const rendered = renderedIntervals(model);
    expect(JSON.stringify(rendered[stop.instance_id])).toBe(JSON.stringify(stop.coverage));
  });
});
