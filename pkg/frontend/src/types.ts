// Wire types for the engine's control API. Field shapes mirror the JSON
// responses exactly; the console never derives analytics of its own.

export type CoverageIntervals = [number, number][];

export interface DprInstance {
  instance_id: string;
  spec_id: string;
  owner: 'user' | 'manager' | string;
  status: 'running' | 'stopped';
  activation_offset: number;
  deactivation_offset: number | null;
  built_through: number;
  coverage: CoverageIntervals;
  structure_ids: string[];
  skips: number;
  started_at_ms: number;
}

export interface RegistryEntry {
  structure_id: string;
  instance_id: string;
  kind: string;
  params: Record<string, unknown>;
  coverage: CoverageIntervals;
  event_time_bounds: ([number, number] | null)[];
}

export interface PlanPart {
  lo: number;
  hi: number;
  path: 'raw_scan' | 'index_probe' | 'filtered_scan' | 'aggregate_read';
  structure_id: string | null;
  est_cost: number;
  cost_share: number;
}

export interface QueryPlan {
  window: [number, number];
  extent: [number, number];
  watermark: number;
  est_cost: number;
  all_raw_cost: number;
  parts: PlanPart[];
}

export interface QueryResultRow {
  key: string | number | null;
  count: number;
}

export interface QueryResponse {
  rows: QueryResultRow[];
  plan: QueryPlan;
  latency_ms: number;
  stats: { matched: number; scanned: number; groups: number };
}

export interface QueryRequest {
  window: { relative_hours?: number; abs_range?: [number, number] };
  predicates: { field: string; eq: string | number | boolean }[];
  group_by: string;
  agg?: 'count';
  top_k: number;
}

export interface MetricsInterval {
  bucket: number;
  start_ms: number;
  ingested: number;
  units: number;
  units_by_owner: Record<string, number>;
  budget_units: number | null;
}

export interface MetricsResponse {
  cursor: number;
  intervals: MetricsInterval[];
  budget_available_upr?: number | null;
  totals: {
    ingested: number;
    watermark: number;
    lag: number;
    units: number;
    units_by_owner: Record<string, number>;
    units_by_instance: Record<string, number>;
    records_by_instance: Record<string, number>;
  };
}

export interface ManagerCandidate {
  spec_id: string;
  kind: string;
  signature: string;
  cost: number;
  benefit: number;
  ratio: number | null;
  sources: string[];
}

export interface ManagerState {
  mode: 'auto' | 'manual';
  forecast: { template: Record<string, unknown>; weight: number }[];
  candidates: ManagerCandidate[];
  last_selection: {
    at_ms: number;
    budget: number;
    chosen: ManagerCandidate[];
    total_cost: number;
    total_benefit: number;
    commands: { started: { instance_id: string; activation: number }[]; stopped: string[] };
  } | null;
}

export interface StreamStatus {
  watermark: number;
  latest_event_ts: number | null;
  segment_count: number;
  executor_lag: number;
}

export interface StartDprResponse {
  instance_id: string;
  activation_offset: number;
}

export interface StopDprResponse {
  instance_id: string;
  coverage: CoverageIntervals;
}

export interface ApiError {
  code: string;
  message: string;
}

export interface DprSpecNode {
  id: string;
  kind: string;
  params: Record<string, unknown>;
  inputs: string[];
}

export interface DprSpec {
  id: string;
  nodes: DprSpecNode[];
}
