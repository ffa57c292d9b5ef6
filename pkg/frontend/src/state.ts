// Console state models. Pure data transforms over API responses: the
// timeline mirrors /dprs coverage verbatim, metrics accumulate through
// cursor polling, and the plan panel is the /query plan restated per part.

import type {
  CoverageIntervals,
  DprInstance,
  MetricsInterval,
  MetricsResponse,
  PlanPart,
  QueryPlan,
  QueryRequest,
  QueryResponse,
} from './types.js';

export interface TimelineBar {
  instanceId: string;
  specId: string;
  owner: string;
  status: string;
  // exactly the engine's coverage intervals; never recomputed client-side
  intervals: CoverageIntervals;
  openEnded: boolean;
  skips: number;
}

export interface TimelineModel {
  bars: TimelineBar[];
  minOffset: number;
  maxOffset: number;
}

export function timelineFromDprs(dprs: DprInstance[], watermark: number): TimelineModel {
  const bars = dprs.map((d) => ({
    instanceId: d.instance_id,
    specId: d.spec_id,
    owner: d.owner,
    status: d.status,
    intervals: d.coverage,
    openEnded: d.deactivation_offset === null,
    skips: d.skips,
  }));
  let min = 0;
  let max = Math.max(watermark, 1);
  for (const bar of bars) {
    for (const [lo, hi] of bar.intervals) {
      min = Math.min(min, lo);
      max = Math.max(max, hi);
    }
  }
  return { bars, minOffset: min, maxOffset: max };
}

/** Byte-exact rendering check target: the intervals a bar displays. */
export function renderedIntervals(model: TimelineModel): Record<string, CoverageIntervals> {
  const out: Record<string, CoverageIntervals> = {};
  for (const bar of model.bars) {
    out[bar.instanceId] = bar.intervals;
  }
  return out;
}

export class MetricsSeries {
  cursor: number | undefined = undefined;
  intervals: MetricsInterval[] = [];
  totals: MetricsResponse['totals'] | null = null;
  readonly maxPoints: number;

  constructor(maxPoints = 600) {
    this.maxPoints = maxPoints;
  }

  /** Fold one poll into the series; buckets must keep arriving in order. */
  absorb(resp: MetricsResponse): void {
    for (const interval of resp.intervals) {
      const last = this.intervals[this.intervals.length - 1];
      if (last && interval.bucket <= last.bucket) {
        throw new Error(`metrics bucket went backwards: ${interval.bucket} after ${last.bucket}`);
      }
      this.intervals.push(interval);
    }
    if (this.intervals.length > this.maxPoints) {
      this.intervals.splice(0, this.intervals.length - this.maxPoints);
    }
    this.cursor = resp.cursor;
    this.totals = resp.totals;
  }

  throughputPoints(): { x: number; y: number }[] {
    return this.intervals.map((iv) => ({ x: iv.start_ms, y: iv.ingested }));
  }

  unitsPoints(): { x: number; total: number; manager: number; budget: number | null }[] {
    return this.intervals.map((iv) => ({
      x: iv.start_ms,
      total: iv.units,
      manager: iv.units_by_owner['manager'] ?? 0,
      budget: iv.budget_units ?? null,
    }));
  }
}

export interface PlanPanelRow {
  lo: number;
  hi: number;
  records: number;
  path: PlanPart['path'];
  structureId: string | null;
  estCost: number;
  costShare: number;
}

export interface PlanPanelModel {
  rows: PlanPanelRow[];
  estCost: number;
  allRawCost: number;
  window: [number, number];
  extent: [number, number];
}

export function planPanelFromResponse(plan: QueryPlan): PlanPanelModel {
  return {
    rows: plan.parts.map((p) => ({
      lo: p.lo,
      hi: p.hi,
      records: p.hi - p.lo,
      path: p.path,
      structureId: p.structure_id,
      estCost: p.est_cost,
      costShare: p.cost_share,
    })),
    estCost: plan.est_cost,
    allRawCost: plan.all_raw_cost,
    window: plan.window,
    extent: plan.extent,
  };
}

/** The segments the panel shows, restated as plan parts; must equal the
 * response's plan parts field for field. */
export function panelSegments(model: PlanPanelModel): PlanPart[] {
  return model.rows.map((r) => ({
    lo: r.lo,
    hi: r.hi,
    path: r.path,
    structure_id: r.structureId,
    est_cost: r.estCost,
    cost_share: r.costShare,
  }));
}

export interface QueryHistoryEntry {
  at: number;
  request: QueryRequest;
  response: QueryResponse;
}

export class QueryHistory {
  readonly entries: QueryHistoryEntry[] = [];

  push(request: QueryRequest, response: QueryResponse, at: number = Date.now()): void {
    this.entries.unshift({ at, request, response });
    if (this.entries.length > 50) this.entries.pop();
  }
}

export interface Toast {
  kind: 'error' | 'info';
  text: string;
  at: number;
}

export class ToastBin {
  readonly toasts: Toast[] = [];

  push(kind: Toast['kind'], text: string, at: number = Date.now()): void {
    this.toasts.unshift({ kind, text, at });
    if (this.toasts.length > 5) this.toasts.pop();
  }
}
