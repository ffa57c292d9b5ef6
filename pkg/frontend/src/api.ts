// Typed client for the engine control API.
//
// Every mutating console action goes through exactly one method here, and
// every call is appended to a CallLog. Replaying that log against a fresh
// engine reproduces the same engine state, which is what makes console
// sessions auditable.

import type {
  DprInstance,
  DprSpec,
  ManagerState,
  MetricsResponse,
  QueryRequest,
  QueryResponse,
  RegistryEntry,
  StartDprResponse,
  StopDprResponse,
  StreamStatus,
} from './types.js';

export interface CallRecord {
  seq: number;
  method: 'GET' | 'POST' | 'DELETE';
  path: string;
  body: unknown | null;
}

export type Transport = (method: string, path: string, body?: unknown) => Promise<unknown>;

export class ApiFailure extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

export function httpTransport(baseUrl: string): Transport {
  return async (method, path, body) => {
    const resp = await fetch(baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const doc = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const err = doc as { code?: string; message?: string } | null;
      throw new ApiFailure(resp.status, err?.code ?? 'http_error',
        err?.message ?? `${method} ${path} -> ${resp.status}`);
    }
    return doc;
  };
}

export class CallLog {
  readonly records: CallRecord[] = [];
  private seq = 0;

  record(method: CallRecord['method'], path: string, body: unknown | null): void {
    this.records.push({ seq: this.seq++, method, path, body });
  }

  mutations(): CallRecord[] {
    return this.records.filter((r) => r.method !== 'GET');
  }

  serialize(): string {
    return JSON.stringify(this.records, null, 1);
  }

  static parse(text: string): CallRecord[] {
    return JSON.parse(text) as CallRecord[];
  }
}

export class EngineClient {
  constructor(private transport: Transport, readonly log: CallLog = new CallLog()) {}

  private async call<T>(method: CallRecord['method'], path: string, body?: unknown): Promise<T> {
    this.log.record(method, path, body ?? null);
    return (await this.transport(method, path, body)) as T;
  }

  // one method per documented route; the console has no other way in

  startDpr(spec: DprSpec): Promise<StartDprResponse> {
    return this.call('POST', '/dprs', spec);
  }

  stopDpr(instanceId: string): Promise<StopDprResponse> {
    return this.call('DELETE', `/dprs/${instanceId}`);
  }

  listDprs(): Promise<DprInstance[]> {
    return this.call('GET', '/dprs');
  }

  registry(kind?: string, field?: string): Promise<RegistryEntry[]> {
    const params = new URLSearchParams();
    if (kind) params.set('kind', kind);
    if (field) params.set('field', field);
    const qs = params.toString();
    return this.call('GET', qs ? `/registry?${qs}` : '/registry');
  }

  query(request: QueryRequest): Promise<QueryResponse> {
    return this.call('POST', '/query', request);
  }

  metrics(cursor?: number): Promise<MetricsResponse> {
    return this.call('GET', cursor === undefined ? '/metrics' : `/metrics?cursor=${cursor}`);
  }

  setManagerMode(mode: 'auto' | 'manual'): Promise<{ mode: string }> {
    return this.call('POST', '/manager', { mode });
  }

  managerState(): Promise<ManagerState> {
    return this.call('GET', '/manager');
  }

  streamStatus(): Promise<StreamStatus> {
    return this.call('GET', '/stream/status');
  }
}

/** Re-issue a recorded call log, in order, against another engine. GET calls
 * are skipped by default since they cannot change state. */
export async function replayCallLog(
  records: CallRecord[],
  transport: Transport,
  options: { includeReads?: boolean } = {},
): Promise<number> {
  let replayed = 0;
  for (const rec of [...records].sort((a, b) => a.seq - b.seq)) {
    if (rec.method === 'GET' && !options.includeReads) continue;
    await transport(rec.method, rec.path, rec.body ?? undefined);
    replayed += 1;
  }
  return replayed;
}

// spec builders for the guided "new routine" form

export function indexSpec(field: string): DprSpec {
  return {
    id: `ui-idx-${field}`,
    nodes: [
      { id: 'src', kind: 'source', params: {}, inputs: [] },
      { id: 'parse', kind: 'parse_fields', params: { fields: [field] }, inputs: ['src'] },
      { id: 'sink', kind: 'sink', params: { structure: 'hash_index', field }, inputs: ['parse'] },
    ],
  };
}

export function prefilterSpec(field: string, value: string | number | boolean, keep: string[]): DprSpec {
  const parseFields = Array.from(new Set([field, ...keep])).sort();
  const kept = Array.from(new Set(keep)).sort();
  return {
    id: `ui-pf-${field}=${value}`,
    nodes: [
      { id: 'src', kind: 'source', params: {}, inputs: [] },
      { id: 'parse', kind: 'parse_fields', params: { fields: parseFields }, inputs: ['src'] },
      { id: 'flt', kind: 'filter', params: { field, op: '==', value }, inputs: ['parse'] },
      { id: 'proj', kind: 'project', params: { fields: kept }, inputs: ['flt'] },
      {
        id: 'sink',
        kind: 'sink',
        params: { structure: 'prefiltered_log', predicate: { field, op: '==', value }, fields: kept },
        inputs: ['proj'],
      },
    ],
  };
}

export function aggregateSpec(groupBy: string, filterField: string, filterValue: string | number | boolean): DprSpec {
  const parseFields = Array.from(new Set([groupBy, filterField])).sort();
  return {
    id: `ui-agg-${groupBy}|${filterField}=${filterValue}`,
    nodes: [
      { id: 'src', kind: 'source', params: {}, inputs: [] },
      { id: 'parse', kind: 'parse_fields', params: { fields: parseFields }, inputs: ['src'] },
      { id: 'flt', kind: 'filter', params: { field: filterField, op: '==', value: filterValue }, inputs: ['parse'] },
      {
        id: 'sink',
        kind: 'sink',
        params: {
          structure: 'materialized_aggregate',
          group_by: groupBy,
          prefilter: [{ field: filterField, op: '==', value: filterValue }],
        },
        inputs: ['flt'],
      },
    ],
  };
}
