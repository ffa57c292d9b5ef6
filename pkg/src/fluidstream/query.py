"""Ad-hoc query answering over partially covered structures.

The query window's offset extent is cut at every structure-coverage
boundary, each resulting segment is answered by its cheapest applicable
access path, and the per-segment group counts are merged before top-k is
applied. A query is always answerable: raw scanning applies everywhere.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from typing import Any, Iterable

from .fields import MISSING, get_path, is_missing, key_token
from .log import RawLog
from .runtime import SnapshotEntry
from .structures import (
    Coverage,
    HASH_INDEX,
    HashIndex,
    MATERIALIZED_AGGREGATE,
    MaterializedAggregate,
    PREFILTERED_LOG,
    Predicate,
    PreFilteredLog,
    merge_counts,
)

RAW_SCAN = "raw_scan"
INDEX_PROBE = "index_probe"
FILTERED_SCAN = "filtered_scan"
AGGREGATE_READ = "aggregate_read"

_PATH_ORDER = {RAW_SCAN: 3, FILTERED_SCAN: 1, INDEX_PROBE: 2, AGGREGATE_READ: 0}

MS_PER_HOUR = 3_600_000


class QueryError(ValueError):
    """Raised when a query document fails validation."""


@dataclass(frozen=True)
class Query:
    window_spec: dict
    predicates: tuple[Predicate, ...]
    group_by: str
    top_k: int

    @classmethod
    def from_json(cls, doc: dict) -> "Query":
        if not isinstance(doc, dict):
            raise QueryError("query must be a JSON object")
        window = doc.get("window")
        if not isinstance(window, dict) or not ("relative_hours" in window or "abs_range" in window):
            raise QueryError("window needs 'relative_hours' or 'abs_range'")
        if "relative_hours" in window and not window["relative_hours"] > 0:
            raise QueryError("relative_hours must be positive")
        if "abs_range" in window:
            rng = window["abs_range"]
            if not (isinstance(rng, (list, tuple)) and len(rng) == 2 and rng[0] < rng[1]):
                raise QueryError("abs_range must be [lo, hi) with lo < hi")
        preds = []
        for p in doc.get("predicates", []):
            if "field" not in p or "eq" not in p:
                raise QueryError("each predicate needs 'field' and 'eq'")
            preds.append(Predicate.eq(p["field"], p["eq"]))
        group_by = doc.get("group_by")
        if not group_by or not isinstance(group_by, str):
            raise QueryError("group_by is required")
        if doc.get("agg", "count") != "count":
            raise QueryError("only count aggregation is supported")
        k = doc.get("top_k", 3)
        if not isinstance(k, int) or k < 1:
            raise QueryError("top_k must be a positive integer")
        return cls(window_spec=window, predicates=tuple(preds), group_by=group_by, top_k=k)

    def to_json(self) -> dict:
        return {
            "window": self.window_spec,
            "predicates": [{"field": p.field, "eq": p.value} for p in self.predicates],
            "group_by": self.group_by,
            "agg": "count",
            "top_k": self.top_k,
        }


def resolve_window(window_spec: dict, raw_log: RawLog) -> tuple[int, int]:
    """Event-time window as half-open [lo, hi) ms. Relative windows anchor on
    the latest ingested event's timestamp, so replays are reproducible."""
    if "abs_range" in window_spec:
        lo, hi = window_spec["abs_range"]
        return int(lo), int(hi)
    hours = window_spec["relative_hours"]
    now = raw_log.latest_event_ts()
    if now is None:
        return (0, 0)
    return (now - int(hours * MS_PER_HOUR) + 1, now + 1)


@dataclass(frozen=True)
class CostModel:
    raw_scan_cost: float = 6.0          # per record: parse + filter
    filtered_scan_cost: float = 1.0     # per stored record
    index_probe_posting_cost: float = 0.2
    index_probe_fixed_cost: float = 5.0  # per probe
    aggregate_read_cost: float = 2.0    # per covered log segment
    stitch_cost: float = 1.0            # per merged part


@dataclass
class PlanPart:
    lo: int
    hi: int
    path: str
    est_cost: float
    structure_id: str | None = None
    entry: SnapshotEntry | None = None

    def to_json(self, total_cost: float) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "path": self.path,
            "structure_id": self.structure_id,
            "est_cost": round(self.est_cost, 3),
            "cost_share": round(self.est_cost / total_cost, 4) if total_cost else 0.0,
        }


@dataclass
class StitchedPlan:
    query: Query
    window: tuple[int, int]
    extent: tuple[int, int]
    parts: list[PlanPart]
    est_cost: float
    all_raw_cost: float
    watermark: int

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "extent": list(self.extent),
            "watermark": self.watermark,
            "est_cost": round(self.est_cost, 3),
            "all_raw_cost": round(self.all_raw_cost, 3),
            "parts": [p.to_json(self.est_cost) for p in self.parts],
        }


def decompose(extent: tuple[int, int], coverages: Iterable[Coverage]) -> list[tuple[int, int]]:
    """Cut the extent at every coverage boundary; within each atomic segment
    the set of applicable structures is constant."""
    lo, hi = extent
    if hi <= lo:
        return []
    points = {lo, hi}
    for cov in coverages:
        for a, b in cov.intervals:
            if lo < a < hi:
                points.add(a)
            if lo < b < hi:
                points.add(b)
    cuts = sorted(points)
    return list(zip(cuts[:-1], cuts[1:]))


class QueryEngine:
    def __init__(self, raw_log: RawLog, cost_model: CostModel | None = None):
        self.log = raw_log
        self.cost = cost_model or CostModel()

    # --- planning -------------------------------------------------------------

    def plan(self, query: Query, snapshot: list[SnapshotEntry]) -> StitchedPlan:
        window = resolve_window(query.window_spec, self.log)
        extent = self.log.window_extent(window)
        watermark = self.log.watermark
        candidates = self._relevant(query, snapshot, extent)
        segments = decompose(extent, [c.coverage for c in candidates])

        parts: list[PlanPart] = []
        for lo, hi in segments:
            best = PlanPart(lo, hi, RAW_SCAN, self.cost.raw_scan_cost * (hi - lo))
            for cand in candidates:
                if not cand.coverage.contains(lo, hi):
                    continue
                part = self._path_for(cand, query, window, lo, hi)
                if part is None:
                    continue
                if (part.est_cost, _PATH_ORDER[part.path], part.structure_id or "") < (
                        best.est_cost, _PATH_ORDER[best.path], best.structure_id or ""):
                    best = part
            parts.append(best)

        parts = self._coalesce(parts, query, window)
        est = sum(p.est_cost for p in parts) + self.cost.stitch_cost * len(parts)
        all_raw = self.cost.raw_scan_cost * (extent[1] - extent[0]) + (
            self.cost.stitch_cost if extent[1] > extent[0] else 0.0)
        if parts and all_raw < est:
            parts = [PlanPart(extent[0], extent[1], RAW_SCAN,
                              self.cost.raw_scan_cost * (extent[1] - extent[0]))]
            est = all_raw
        return StitchedPlan(query=query, window=window, extent=extent, parts=parts,
                            est_cost=est if parts else 0.0, all_raw_cost=all_raw,
                            watermark=watermark)

    def _relevant(self, query: Query, snapshot: list[SnapshotEntry],
                  extent: tuple[int, int]) -> list[SnapshotEntry]:
        out = []
        for entry in snapshot:
            clipped = entry.coverage.clip(*extent)
            if clipped.empty:
                continue
            if entry.kind == HASH_INDEX:
                if any(p.field == entry.params["field"] for p in query.predicates):
                    out.append(_with_coverage(entry, clipped))
            elif entry.kind == PREFILTERED_LOG:
                structure: PreFilteredLog = entry.structure
                if structure.predicate in query.predicates:
                    out.append(_with_coverage(entry, clipped))
            elif entry.kind == MATERIALIZED_AGGREGATE:
                structure: MaterializedAggregate = entry.structure
                if (structure.group_by == query.group_by
                        and set(structure.prefilter) == set(query.predicates)):
                    out.append(_with_coverage(entry, clipped))
        return sorted(out, key=lambda e: e.structure_id)

    def _path_for(self, entry: SnapshotEntry, query: Query, window: tuple[int, int],
                  lo: int, hi: int) -> PlanPart | None:
        if entry.kind == HASH_INDEX:
            value = next(p.value for p in query.predicates if p.field == entry.params["field"])
            n = entry.structure.count_in(value, lo, hi)
            cost = self.cost.index_probe_fixed_cost + self.cost.index_probe_posting_cost * n
            return PlanPart(lo, hi, INDEX_PROBE, cost, entry.structure_id, entry)
        if entry.kind == PREFILTERED_LOG:
            n = entry.structure.count_in(lo, hi)
            return PlanPart(lo, hi, FILTERED_SCAN, self.cost.filtered_scan_cost * n,
                            entry.structure_id, entry)
        chunks, remainder = self._aggregate_chunks(entry, window, lo, hi)
        cost = (self.cost.aggregate_read_cost * len(chunks)
                + self.cost.raw_scan_cost * remainder)
        return PlanPart(lo, hi, AGGREGATE_READ, cost, entry.structure_id, entry)

    def _aggregate_chunks(self, entry: SnapshotEntry, window: tuple[int, int],
                          lo: int, hi: int) -> tuple[list[tuple[int, int]], int]:
        """Sealed log segments inside [lo, hi) that the aggregate covers whole
        and whose event-time bounds sit entirely inside the window; counts for
        those need no per-record work. Everything else is the remainder."""
        chunks: list[tuple[int, int]] = []
        covered = 0
        for seg in self.log.segments():
            if seg.lo >= hi or seg.hi <= lo:
                continue
            if (seg.sealed and seg.lo >= lo and seg.hi <= hi
                    and entry.coverage.contains(seg.lo, seg.hi)
                    and seg.min_event_ts is not None
                    and window[0] <= seg.min_event_ts and seg.max_event_ts < window[1]):
                chunks.append((seg.lo, seg.hi))
                covered += seg.hi - seg.lo
        return chunks, (hi - lo) - covered

    def _coalesce(self, parts: list[PlanPart], query: Query,
                  window: tuple[int, int]) -> list[PlanPart]:
        out: list[PlanPart] = []
        for part in parts:
            if out and out[-1].path == part.path and out[-1].structure_id == part.structure_id \
                    and out[-1].hi == part.lo:
                prev = out.pop()
                merged = PlanPart(prev.lo, part.hi, part.path, 0.0, part.structure_id, part.entry)
                if part.path == RAW_SCAN:
                    merged.est_cost = self.cost.raw_scan_cost * (merged.hi - merged.lo)
                else:
                    merged.est_cost = self._path_for(part.entry, query, window,
                                                     merged.lo, merged.hi).est_cost
                out.append(merged)
            else:
                out.append(part)
        return out

    # --- execution --------------------------------------------------------------

    def execute(self, plan: StitchedPlan) -> tuple[list[dict], dict]:
        counts: Counter = Counter()
        scanned = 0
        for part in plan.parts:
            if part.path == RAW_SCAN or part.entry is None:
                part_counts, n = self._run_raw(plan, part.lo, part.hi)
            elif part.path == INDEX_PROBE:
                part_counts, n = self._run_index(plan, part)
            elif part.path == FILTERED_SCAN:
                part_counts, n = self._run_filtered(plan, part)
            else:
                part_counts, n = self._run_aggregate(plan, part)
            counts = merge_counts([counts, part_counts])
            scanned += n
        rows = top_k_rows(counts, plan.query.top_k)
        stats = {"matched": sum(counts.values()), "scanned": scanned,
                 "groups": len(counts)}
        return rows, stats

    def _run_raw(self, plan: StitchedPlan, lo: int, hi: int) -> tuple[Counter, int]:
        w_lo, w_hi = plan.window
        predicates = plan.query.predicates
        group_by = plan.query.group_by
        counts: Counter = Counter()
        n = 0
        for _offset, ts, payload in self.log.iter_records(lo, hi):
            n += 1
            if not w_lo <= ts < w_hi:
                continue
            try:
                doc = json.loads(payload)
            except Exception:
                continue
            ok = True
            for p in predicates:
                v = get_path(doc, p.field)
                if is_missing(v) or v != p.value:
                    ok = False
                    break
            if not ok:
                continue
            key = get_path(doc, group_by)
            if is_missing(key):
                continue
            counts[_freeze(key)] += 1
        return counts, n

    def _run_index(self, plan: StitchedPlan, part: PlanPart) -> tuple[Counter, int]:
        index: HashIndex = part.entry.structure
        value = next(p.value for p in plan.query.predicates if p.field == index.field_path)
        residuals = [p for p in plan.query.predicates if p.field != index.field_path]
        group_by = plan.query.group_by
        w_lo, w_hi = plan.window
        counts: Counter = Counter()
        offsets = index.probe(value, Coverage.of((part.lo, part.hi)))
        for offset in offsets:
            ts = self.log.event_ts(offset)
            if not w_lo <= ts < w_hi:
                continue
            if not residuals and group_by == index.field_path:
                counts[_freeze(value)] += 1
                continue
            try:
                doc = json.loads(self.log.get(offset))
            except Exception:
                continue
            if any(is_missing(v := get_path(doc, p.field)) or v != p.value for p in residuals):
                continue
            key = get_path(doc, group_by)
            if is_missing(key):
                continue
            counts[_freeze(key)] += 1
        return counts, len(offsets)

    def _run_filtered(self, plan: StitchedPlan, part: PlanPart) -> tuple[Counter, int]:
        structure: PreFilteredLog = part.entry.structure
        residuals = [p for p in plan.query.predicates if p != structure.predicate]
        group_by = plan.query.group_by
        w_lo, w_hi = plan.window
        counts: Counter = Counter()
        n = 0
        for offset, ts, row in structure.iter_in(part.lo, part.hi):
            n += 1
            if not w_lo <= ts < w_hi:
                continue
            doc = None
            ok = True
            for p in residuals:
                v = row.get(p.field, MISSING)
                if is_missing(v):
                    if doc is None:
                        doc = self._parse_at(offset)
                    v = MISSING if doc is None else get_path(doc, p.field)
                if is_missing(v) or v != p.value:
                    ok = False
                    break
            if not ok:
                continue
            key = row.get(group_by, MISSING)
            if is_missing(key):
                if doc is None:
                    doc = self._parse_at(offset)
                key = MISSING if doc is None else get_path(doc, group_by)
            if is_missing(key):
                continue
            counts[_freeze(key)] += 1
        return counts, n

    def _run_aggregate(self, plan: StitchedPlan, part: PlanPart) -> tuple[Counter, int]:
        structure: MaterializedAggregate = part.entry.structure
        chunks, _ = self._aggregate_chunks(part.entry, plan.window, part.lo, part.hi)
        counts: Counter = Counter()
        for seg_lo, _seg_hi in chunks:
            counts.update({_freeze(k): c for k, c in structure.chunk_counts(seg_lo).items()})
        chunk_cov = Coverage(tuple(chunks))
        n = sum(hi - lo for lo, hi in chunks)
        for lo, hi in Coverage.of((part.lo, part.hi)).subtract(chunk_cov).intervals:
            part_counts, scanned = self._run_raw(plan, lo, hi)
            counts = merge_counts([counts, part_counts])
            n += scanned
        return counts, n

    def _parse_at(self, offset: int) -> Any | None:
        try:
            return json.loads(self.log.get(offset))
        except Exception:
            return None

    def answer(self, query: Query, snapshot: list[SnapshotEntry]) -> tuple[list[dict], StitchedPlan, dict]:
        plan = self.plan(query, snapshot)
        rows, stats = self.execute(plan)
        return rows, plan, stats


def _with_coverage(entry: SnapshotEntry, coverage: Coverage) -> SnapshotEntry:
    return replace(entry, coverage=coverage)


def _freeze(key: Any) -> Any:
    # group keys must be hashable; non-scalar JSON values are canonicalized
    if isinstance(key, (dict, list)):
        return json.dumps(key, sort_keys=True)
    return key


def top_k_rows(counts: Counter, k: int) -> list[dict]:
    """Top k by count descending, ties broken by key ascending. Applied only
    after all partial counts are merged."""
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], key_token(kv[0])))
    return [{"key": key, "count": count} for key, count in ordered[:k]]


def raw_oracle(raw_log: RawLog, query: Query) -> list[dict]:
    """Ground truth: full scan, per-record parse, filter, group-count, top-k.

    Ignores every structure; used as the independent check for plan execution.
    """
    w_lo, w_hi = resolve_window(query.window_spec, raw_log)
    counts: Counter = Counter()
    for _offset, ts, payload in raw_log.iter_records(0, raw_log.watermark):
        if not w_lo <= ts < w_hi:
            continue
        try:
            doc = json.loads(payload)
        except Exception:
            continue
        keep = True
        for p in query.predicates:
            v = get_path(doc, p.field)
            if is_missing(v) or v != p.value:
                keep = False
                break
        if not keep:
            continue
        key = get_path(doc, query.group_by)
        if is_missing(key):
            continue
        counts[_freeze(key)] += 1
    return top_k_rows(counts, query.top_k)
