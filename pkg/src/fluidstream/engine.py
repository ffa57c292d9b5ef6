"""Engine facade: raw log + runtime + query engine + manager behind one object.

The control API and the scenario driver both talk to this; neither reaches
around it. Mutating calls funnel into the runtime's control queue, reads
take snapshots, so queries run concurrently with ingestion and routine
execution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

from .log import LogConfig, RawLog
from .manager import BudgetTrace, DprManager
from .operators import DprSpec
from .query import Query, QueryEngine, raw_oracle
from .runtime import DprRuntime


@dataclass
class EngineConfig:
    log_dir: str | None = None
    seal_record_count: int = 4096
    seal_seconds: float | None = 60.0
    fusion_level: int = 2
    batch_size: int = 512
    bucket_ms: int = 1000
    timestamp_key: str = "created_at"
    threaded: bool = False
    manager_half_life_s: float = 600.0
    manager_min_active_s: float = 30.0
    manager_tick_period_s: float = 10.0


class Engine:
    def __init__(self, config: EngineConfig | None = None,
                 clock_ms: Callable[[], int] | None = None):
        self.config = config or EngineConfig()
        self.clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        log_config = LogConfig(
            seal_record_count=self.config.seal_record_count,
            seal_seconds=self.config.seal_seconds,
            timestamp_key=self.config.timestamp_key,
        )
        self.log = RawLog(directory=self.config.log_dir, config=log_config)
        self.runtime = DprRuntime(
            self.log, fusion_level=self.config.fusion_level,
            batch_size=self.config.batch_size,
            meter_bucket_ms=self.config.bucket_ms, clock_ms=self.clock_ms)
        self.query_engine = QueryEngine(self.log)
        self.manager = DprManager(
            self.runtime, cost_model=self.query_engine.cost,
            half_life_s=self.config.manager_half_life_s,
            min_active_s=self.config.manager_min_active_s,
            tick_period_s=self.config.manager_tick_period_s)
        self.budget_trace: BudgetTrace | None = None
        self._ingest_buckets: dict[int, int] = {}
        self._ingested = 0
        if self.config.threaded:
            self.runtime.start_executor()

    # --- stream -----------------------------------------------------------------

    def ingest(self, payload: bytes) -> int:
        offset = self.log.ingest(payload)
        bucket = self.log.event_ts(offset) // self.config.bucket_ms
        self._ingest_buckets[bucket] = self._ingest_buckets.get(bucket, 0) + 1
        self._ingested += 1
        return offset

    def pump(self, max_records: int | None = None) -> int:
        return self.runtime.pump(max_records)

    def drain(self) -> None:
        self.runtime.drain()

    def stream_status(self) -> dict:
        return {
            "watermark": self.log.watermark,
            "latest_event_ts": self.log.latest_event_ts(),
            "segment_count": len(self.log.segments()),
            "executor_lag": self.runtime.lag(),
        }

    # --- routines ------------------------------------------------------------------

    def start_dpr(self, spec_doc: dict, owner: str = "user") -> dict:
        spec = DprSpec.from_json(spec_doc)
        instance_id, activation = self.runtime.start_dpr(spec, owner=owner)
        return {"instance_id": instance_id, "activation_offset": activation}

    def stop_dpr(self, instance_id: str) -> dict:
        coverage = self.runtime.stop_dpr(instance_id)
        return {"instance_id": instance_id, "coverage": coverage.to_json()}

    def list_dprs(self) -> list[dict]:
        out = []
        for inst in self.runtime.instances.values():
            out.append({
                "instance_id": inst.instance_id,
                "spec_id": inst.spec.id,
                "owner": inst.owner,
                "status": inst.status,
                "activation_offset": inst.activation_offset,
                "deactivation_offset": inst.deactivation_offset,
                "built_through": min(self.runtime.cursor,
                                     inst.deactivation_offset
                                     if inst.deactivation_offset is not None
                                     else self.runtime.cursor),
                "coverage": self.runtime.coverage_of(inst.instance_id).to_json(),
                "structure_ids": list(inst.structure_ids),
                "skips": inst.skips,
                "started_at_ms": inst.started_at_ms,
            })
        return sorted(out, key=lambda d: (d["activation_offset"], d["instance_id"]))

    def registry_entries(self, kind: str | None = None, field_path: str | None = None) -> list[dict]:
        out = []
        for entry in self.runtime.registry_snapshot():
            if kind and entry.kind != kind:
                continue
            if field_path:
                params_field = entry.params.get("field") or entry.params.get("group_by") \
                    or entry.params.get("predicate", {}).get("field")
                if params_field != field_path:
                    continue
            bounds = [self.log.time_bounds(lo, hi) for lo, hi in entry.coverage.intervals]
            out.append({
                "structure_id": entry.structure_id,
                "instance_id": entry.instance_id,
                "kind": entry.kind,
                "params": entry.params,
                "coverage": entry.coverage.to_json(),
                "event_time_bounds": [list(b) if b else None for b in bounds],
            })
        return out

    # --- queries ---------------------------------------------------------------------

    def query(self, doc: dict) -> dict:
        query = Query.from_json(doc)
        t0 = time.perf_counter()
        snapshot = self.runtime.registry_snapshot()
        rows, plan, stats = self.query_engine.answer(query, snapshot)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        self.manager.observe_query(query, stats, now_ms=self.clock_ms())
        return {
            "rows": rows,
            "plan": plan.to_json(),
            "latency_ms": round(latency_ms, 3),
            "stats": stats,
        }

    def oracle(self, doc: dict) -> list[dict]:
        return raw_oracle(self.log, Query.from_json(doc))

    # --- manager ------------------------------------------------------------------------

    def set_manager_mode(self, mode: str) -> dict:
        if mode not in ("auto", "manual"):
            raise ValueError("mode must be 'auto' or 'manual'")
        self.manager.mode = mode
        return {"mode": mode}

    def manager_state(self) -> dict:
        return self.manager.state(now_ms=self.clock_ms())

    def manager_tick(self, now_ms: int | None = None, horizon_ms: int | None = None) -> dict | None:
        return self.manager.tick(now_ms=now_ms, trace=self.budget_trace,
                                 horizon_ms=horizon_ms)

    # --- metrics ---------------------------------------------------------------------------

    def metrics(self, cursor: int | None = None) -> dict:
        meter = self.runtime.meter
        owners = {iid: inst.owner for iid, inst in self.runtime.instances.items()}
        buckets = sorted(set(self._ingest_buckets) | set(meter.buckets))
        complete = buckets[:-1] if buckets else []
        intervals = []
        for b in complete:
            if cursor is not None and b <= cursor:
                continue
            units = meter.buckets.get(b, {})
            by_owner: dict[str, float] = {}
            for iid, u in units.items():
                owner = owners.get(iid, "user")
                by_owner[owner] = by_owner.get(owner, 0.0) + u
            start_ms = b * self.config.bucket_ms
            ingested = self._ingest_buckets.get(b, 0)
            budget_upr = (self.budget_trace.value_at(start_ms)
                          if self.budget_trace is not None else None)
            intervals.append({
                "bucket": b,
                "start_ms": start_ms,
                "ingested": ingested,
                "units": round(sum(units.values()), 4),
                "units_by_owner": {k: round(v, 4) for k, v in by_owner.items()},
                "budget_units": (round(budget_upr * ingested, 4)
                                 if budget_upr is not None else None),
            })
        totals_by_owner: dict[str, float] = {}
        for iid, total in meter.totals.items():
            owner = owners.get(iid, "user")
            totals_by_owner[owner] = totals_by_owner.get(owner, 0.0) + total
        latest_ts = self.log.latest_event_ts()
        available = (self.budget_trace.value_at(latest_ts)
                     if self.budget_trace is not None and latest_ts is not None else None)
        return {
            "cursor": complete[-1] if complete else (cursor if cursor is not None else -1),
            "intervals": intervals,
            "budget_available_upr": available,
            "totals": {
                "ingested": self._ingested,
                "watermark": self.log.watermark,
                "lag": self.runtime.lag(),
                "units": round(meter.total(), 4),
                "units_by_owner": {k: round(v, 4) for k, v in totals_by_owner.items()},
                "units_by_instance": {k: round(v, 4) for k, v in meter.totals.items()},
                "records_by_instance": dict(meter.records),
            },
        }

    def close(self) -> None:
        if self.config.threaded:
            self.runtime.stop_executor()
        self.log.close()
