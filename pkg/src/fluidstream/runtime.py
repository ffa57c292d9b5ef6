"""Routine lifecycle and execution over the subscribed stream.

Start/stop requests land on a control queue and take effect at batch
boundaries, never mid-record, so every instance's active period is a clean
half-open offset interval. Records only flow through an instance when their
offset is inside that interval; the registry remembers the interval and the
structures forever. Ingestion never waits on any of this.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

from .fields import MISSING, compare, get_path, is_missing
from .fusion import FusedDag, FusedNode, fuse
from .log import RawLog
from .operators import (
    DprSpec,
    FILTER,
    PARSE_FIELDS,
    PROJECT,
    SINK,
    SpecError,
    TRANSFORM,
    TRANSFORM_CATALOG,
    validate_spec,
)
from .structures import (
    Coverage,
    HashIndex,
    MaterializedAggregate,
    Predicate,
    PreFilteredLog,
    Structure,
)

log = logging.getLogger(__name__)

RUNNING = "running"
STOPPED = "stopped"


@dataclass
class DprInstance:
    instance_id: str
    spec: DprSpec
    owner: str
    activation_offset: int
    deactivation_offset: int | None = None
    status: str = RUNNING
    structure_ids: list[str] = field(default_factory=list)
    skips: int = 0
    started_at_ms: int = 0

    def gate(self) -> tuple[int, int | None]:
        return (self.activation_offset, self.deactivation_offset)


@dataclass(frozen=True)
class RegistryEntry:
    structure_id: str
    instance_id: str
    kind: str
    params: dict
    structure: Structure

    def params_key(self) -> str:
        return json.dumps(self.params, sort_keys=True)


@dataclass(frozen=True)
class SnapshotEntry:
    structure_id: str
    instance_id: str
    kind: str
    params: dict
    structure: Structure
    coverage: Coverage


class BudgetMeter:
    """Deterministic unit accounting: calibrated costs, bucketed by event time."""

    def __init__(self, bucket_ms: int = 1000):
        self.bucket_ms = bucket_ms
        self.totals: dict[str, float] = {}
        self.records: dict[str, int] = {}
        self.buckets: dict[int, dict[str, float]] = {}
        self.node_invocations: Counter = Counter()

    def charge(self, instance_id: str, units: float, event_ts: int) -> None:
        self.totals[instance_id] = self.totals.get(instance_id, 0.0) + units
        bucket = self.buckets.setdefault(event_ts // self.bucket_ms, {})
        bucket[instance_id] = bucket.get(instance_id, 0.0) + units

    def count_records(self, instance_id: str, n: int) -> None:
        self.records[instance_id] = self.records.get(instance_id, 0) + n

    def rate(self, instance_id: str) -> float | None:
        n = self.records.get(instance_id, 0)
        if n == 0:
            return None
        return self.totals.get(instance_id, 0.0) / n

    def total(self) -> float:
        return sum(self.totals.values())


@dataclass
class BatchStats:
    records: int = 0
    units: dict[str, float] = field(default_factory=dict)
    invocations: Counter = field(default_factory=Counter)
    skips: Counter = field(default_factory=Counter)

    def units_total(self) -> float:
        return sum(self.units.values())


class DagRunner:
    """Executes one fused DAG over record batches, charging calibrated costs.

    Node provenance carries instance ids; a shared node's cost is split
    across the instances it serves that are active at the record's offset.
    """

    def __init__(self, dag: FusedDag, gates: dict[str, tuple[int, int | None]],
                 structures: dict[tuple[str, str], Structure],
                 segment_lo: Callable[[int], int]):
        self.dag = dag
        self.gates = gates
        self.structures = structures
        self.segment_lo = segment_lo
        by_id = dag.by_id()
        self._nodes: list[FusedNode] = list(dag.nodes)
        self._parent_idx: list[int] = []
        index = {n.id: i for i, n in enumerate(self._nodes)}
        for n in self._nodes:
            self._parent_idx.append(-1 if n.input is None else index[n.input])
        self._owners: list[list[tuple[str, int, int | None]]] = []
        for n in self._nodes:
            owners = []
            for iid, _node in n.provenance:
                if iid in gates:
                    act, deact = gates[iid]
                    owners.append((iid, act, deact))
            self._owners.append(owners)
        self._unit_cost = [n.unit_cost() for n in self._nodes]

    def process(self, batch: list[tuple[int, int, bytes]], meter: BudgetMeter | None = None,
                stats: BatchStats | None = None) -> BatchStats:
        stats = stats or BatchStats()
        if not batch:
            return stats
        lo = batch[0][0]
        hi = batch[-1][0] + 1
        # Per-batch activity mode per node: fully on, fully off, or boundary-mixed.
        modes: list[tuple[str, list[str]]] = []
        for owners in self._owners:
            on = [iid for iid, act, deact in owners
                  if act <= lo and (deact is None or deact >= hi)]
            partial = [o for o in owners
                       if o[1] < hi and (o[2] is None or o[2] > lo)]
            if len(on) == len(owners) and owners:
                modes.append(("on", on))
            elif not partial:
                modes.append(("off", []))
            else:
                modes.append(("mixed", []))

        nodes = self._nodes
        n_nodes = len(nodes)
        parent_idx = self._parent_idx
        unit_cost = self._unit_cost
        alive = [False] * n_nodes
        outputs: list[Any] = [None] * n_nodes

        for offset, event_ts, payload in batch:
            for i in range(n_nodes):
                node = nodes[i]
                pi = parent_idx[i]
                if pi < 0:
                    alive[i] = True
                    outputs[i] = {}
                    continue
                alive[i] = False
                if not alive[pi]:
                    continue
                mode, on_list = modes[i]
                if mode == "on":
                    active = on_list
                elif mode == "off":
                    continue
                else:
                    active = [iid for iid, act, deact in self._owners[i]
                              if act <= offset and (deact is None or offset < deact)]
                    if not active:
                        continue

                stats.invocations[node.id] += 1
                cost = unit_cost[i]
                if cost:
                    share = cost / len(active)
                    if meter is not None:
                        for iid in active:
                            meter.charge(iid, share, event_ts)
                    else:
                        for iid in active:
                            stats.units[iid] = stats.units.get(iid, 0.0) + share

                # each node's output env derives from its input's, so values
                # never leak across routine branches in a fused DAG
                kind = node.kind
                if kind == PARSE_FIELDS:
                    try:
                        doc = json.loads(payload)
                    except Exception:
                        for iid in active:
                            stats.skips[iid] += 1
                        continue
                    env = dict(outputs[pi])
                    for f in node.params["fields"]:
                        v = get_path(doc, f)
                        if not is_missing(v):
                            env[f] = v
                    alive[i] = True
                    outputs[i] = env
                elif kind == FILTER:
                    v = outputs[pi].get(node.params["field"], MISSING)
                    if is_missing(v):
                        for iid in active:
                            stats.skips[iid] += 1
                        continue
                    if compare(v, node.params["op"], node.params["value"]):
                        alive[i] = True
                        outputs[i] = outputs[pi]
                elif kind == PROJECT:
                    src = outputs[pi]
                    outputs[i] = {f: src[f] for f in node.params["fields"] if f in src}
                    alive[i] = True
                elif kind == TRANSFORM:
                    entry = TRANSFORM_CATALOG[node.params["token"]]
                    result = entry.fn(node.params, outputs[pi])
                    if is_missing(result):
                        for iid in active:
                            stats.skips[iid] += 1
                        continue
                    outputs[i] = {**outputs[pi], node.params["out"]: result}
                    alive[i] = True
                elif kind == SINK:
                    self._apply_sink(node, active, offset, event_ts, outputs[pi], stats)
        stats.records += len(batch)
        return stats

    def _apply_sink(self, node: FusedNode, active: list[str], offset: int,
                    event_ts: int, view: dict, stats: BatchStats) -> None:
        params = node.params
        structure_kind = params["structure"]
        for iid, orig_node in node.provenance:
            if iid not in active:
                continue
            structure = self.structures.get((iid, orig_node))
            if structure is None:
                continue
            if structure_kind == "hash_index":
                v = view.get(params["field"], MISSING)
                if is_missing(v) or v is None or not structure.add(offset, v):
                    stats.skips[iid] += 1
            elif structure_kind == "prefiltered_log":
                structure.add(offset, event_ts, dict(view))
            else:  # materialized_aggregate
                key = view.get(params["group_by"], MISSING)
                if is_missing(key):
                    stats.skips[iid] += 1
                    continue
                structure.add(self.segment_lo(offset), key)


def make_structure(sink: Any) -> Structure:
    params = sink.params
    kind = params["structure"]
    if kind == "hash_index":
        return HashIndex(params["field"])
    if kind == "prefiltered_log":
        p = params["predicate"]
        return PreFilteredLog(Predicate(p["field"], p.get("op", "=="), p["value"]),
                              tuple(params.get("fields", [])))
    return MaterializedAggregate(
        params["group_by"],
        tuple(Predicate(p["field"], p.get("op", "=="), p["value"])
              for p in params.get("prefilter", [])),
    )


def run_spec_over(spec: DprSpec, records: Iterable[tuple[int, int, bytes]],
                  segment_lo: Callable[[int], int]) -> tuple[dict[str, Structure], BatchStats]:
    """Run one spec standalone over records; the offline rebuild oracle."""
    dag = fuse([replace(spec, id="@solo")], level=2)
    structures: dict[tuple[str, str], Structure] = {}
    for sink in spec.sinks():
        structures[("@solo", sink.id)] = make_structure(sink)
    runner = DagRunner(dag, {"@solo": (0, None)}, structures, segment_lo)
    stats = runner.process(list(records))
    return {sink_id: s for (_iid, sink_id), s in structures.items()}, stats


class DprRuntime:
    """Owns instances, their structures, the fused executor and the registry."""

    def __init__(self, raw_log: RawLog, fusion_level: int = 2, batch_size: int = 512,
                 meter_bucket_ms: int = 1000, clock_ms: Callable[[], int] | None = None):
        self.log = raw_log
        self.fusion_level = fusion_level
        self.batch_size = batch_size
        self.meter = BudgetMeter(bucket_ms=meter_bucket_ms)
        self.clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        self.instances: dict[str, DprInstance] = {}
        self.registry: list[RegistryEntry] = []
        self._structures: dict[tuple[str, str], Structure] = {}
        self._control: deque = deque()
        self._control_lock = threading.Lock()
        self._seq = itertools.count()
        self._cursor = 0
        self._runner: DagRunner | None = None
        self._thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self._state_lock = threading.Lock()

    # --- control plane -------------------------------------------------------

    @property
    def cursor(self) -> int:
        return self._cursor

    def lag(self) -> int:
        return self.log.watermark - self._cursor

    def start_dpr(self, spec: DprSpec, owner: str = "user") -> tuple[str, int]:
        """Activate a routine at the next ingested offset. Never pauses ingestion."""
        validate_spec(spec)
        with self._state_lock:
            for inst in self.instances.values():
                if inst.spec.id == spec.id and inst.status == RUNNING:
                    raise SpecError(f"a routine with id {spec.id!r} is already running")
        op = {"kind": "start", "spec": spec, "owner": owner,
              "watermark": self.log.watermark, "done": threading.Event(), "result": None}
        self._enqueue(op)
        self._await(op)
        return op["result"]

    def stop_dpr(self, instance_id: str, wait: bool | None = None) -> Coverage:
        """Fix the instance's deactivation boundary and seal its structures."""
        with self._state_lock:
            inst = self.instances.get(instance_id)
            if inst is None:
                raise KeyError(f"unknown instance: {instance_id}")
            if inst.status != RUNNING:
                raise SpecError(f"instance already stopped: {instance_id}")
        op = {"kind": "stop", "instance_id": instance_id,
              "watermark": self.log.watermark, "done": threading.Event(), "result": None}
        self._enqueue(op)
        self._await(op)
        inst = self.instances[instance_id]
        if wait is None:
            wait = self._thread is not None
        if wait and self._thread is not None:
            deadline = time.time() + 30.0
            while self._cursor < inst.deactivation_offset and time.time() < deadline:
                time.sleep(0.001)
        return Coverage.of((inst.activation_offset, inst.deactivation_offset))

    def _enqueue(self, op: dict) -> None:
        with self._control_lock:
            self._control.append(op)
        self.log.notify()

    def _await(self, op: dict) -> None:
        if self._thread is None:
            self._drain_control()
        else:
            if not op["done"].wait(timeout=30.0):
                raise TimeoutError("executor did not acknowledge the control request")

    def _drain_control(self) -> None:
        changed = False
        while True:
            with self._control_lock:
                if not self._control:
                    break
                op = self._control.popleft()
            if op["kind"] == "start":
                op["result"] = self._apply_start(op["spec"], op["owner"], op["watermark"])
            else:
                op["result"] = self._apply_stop(op["instance_id"], op["watermark"])
            changed = True
            op["done"].set()
        if changed:
            self._rebuild_runner()

    def _apply_start(self, spec: DprSpec, owner: str, watermark: int) -> tuple[str, int]:
        activation = max(watermark, self._cursor)
        instance_id = f"{spec.id}:{next(self._seq)}"
        inst = DprInstance(instance_id=instance_id, spec=spec, owner=owner,
                           activation_offset=activation, started_at_ms=self.clock_ms())
        with self._state_lock:
            self.instances[instance_id] = inst
            for sink in spec.sinks():
                structure = make_structure(sink)
                sid = f"{instance_id}/{sink.id}"
                self._structures[(instance_id, sink.id)] = structure
                self.registry.append(RegistryEntry(
                    structure_id=sid, instance_id=instance_id,
                    kind=structure.kind, params=structure.params, structure=structure))
                inst.structure_ids.append(sid)
        log.info("started %s at offset %d", instance_id, activation)
        return instance_id, activation

    def _apply_stop(self, instance_id: str, watermark: int) -> int:
        inst = self.instances[instance_id]
        deactivation = max(watermark, self._cursor, inst.activation_offset)
        with self._state_lock:
            inst.deactivation_offset = deactivation
            inst.status = STOPPED
        log.info("stopped %s with coverage [%d, %d)", instance_id,
                 inst.activation_offset, deactivation)
        return deactivation

    def _rebuild_runner(self) -> None:
        live = [i for i in self.instances.values()
                if i.deactivation_offset is None or i.deactivation_offset > self._cursor]
        if not live:
            self._runner = None
            return
        specs = [replace(i.spec, id=i.instance_id) for i in live]
        dag = fuse(specs, self.fusion_level)
        gates = {i.instance_id: i.gate() for i in live}
        self._runner = DagRunner(dag, gates, self._structures, self.log.segment_lo)

    # --- data plane ------------------------------------------------------------

    def pump(self, max_records: int | None = None) -> int:
        """Synchronous executor: apply pending control, then process batches."""
        processed = 0
        self._drain_control()
        while self._cursor < self.log.watermark:
            if max_records is not None and processed >= max_records:
                break
            n = self.batch_size
            if max_records is not None:
                n = min(n, max_records - processed)
            processed += self._process_batch(n)
            self._drain_control()
        return processed

    def _process_batch(self, max_records: int) -> int:
        hi = min(self._cursor + max_records, self.log.watermark)
        if hi <= self._cursor:
            return 0
        batch = list(self.log.iter_records(self._cursor, hi))
        if self._runner is not None:
            stats = self._runner.process(batch, meter=self.meter)
            self.meter.node_invocations.update(stats.invocations)
            for iid, n in self._records_by_instance(batch[0][0], batch[-1][0] + 1).items():
                self.meter.count_records(iid, n)
            for iid, n in stats.skips.items():
                inst = self.instances.get(iid)
                if inst is not None:
                    inst.skips += n
        self._cursor = hi
        return len(batch)

    def _records_by_instance(self, lo: int, hi: int) -> dict[str, int]:
        out: dict[str, int] = {}
        for inst in self.instances.values():
            a = max(lo, inst.activation_offset)
            b = min(hi, inst.deactivation_offset if inst.deactivation_offset is not None else hi)
            if b > a:
                out[inst.instance_id] = b - a
        return out

    def start_executor(self) -> None:
        if self._thread is not None:
            return
        self._stopping.clear()
        self._thread = threading.Thread(target=self._run, name="dpr-executor", daemon=True)
        self._thread.start()

    def stop_executor(self) -> None:
        if self._thread is None:
            return
        self._stopping.set()
        self.log.notify()
        self._thread.join(timeout=10)
        self._thread = None

    def _run(self) -> None:
        while not self._stopping.is_set():
            self._drain_control()
            if self._cursor < self.log.watermark:
                self._process_batch(self.batch_size)
            else:
                self.log.wait_for_data(self._cursor, timeout=0.05)

    def drain(self, timeout: float = 60.0) -> None:
        """Block until the executor has consumed everything ingested so far."""
        if self._thread is None:
            self.pump()
            return
        target = self.log.watermark
        deadline = time.time() + timeout
        while (self._cursor < target or self._control) and time.time() < deadline:
            time.sleep(0.001)

    # --- registry --------------------------------------------------------------

    def coverage_of(self, instance_id: str, at_cursor: int | None = None) -> Coverage:
        inst = self.instances[instance_id]
        cursor = self._cursor if at_cursor is None else at_cursor
        hi = cursor if inst.deactivation_offset is None else min(inst.deactivation_offset, cursor)
        if hi <= inst.activation_offset:
            return Coverage()
        return Coverage.of((inst.activation_offset, hi))

    def registry_snapshot(self) -> list[SnapshotEntry]:
        cursor = self._cursor
        out = []
        with self._state_lock:
            entries = list(self.registry)
        for e in entries:
            cov = self.coverage_of(e.instance_id, at_cursor=cursor)
            out.append(SnapshotEntry(e.structure_id, e.instance_id, e.kind,
                                     e.params, e.structure, cov))
        return out

    def registry_lookup(self, kind: str, params: dict | None = None,
                        offset_range: tuple[int, int] | None = None,
                        window: tuple[int, int] | None = None) -> list[SnapshotEntry]:
        """Structures of a kind (and exact params, when given) intersecting a range."""
        if window is not None:
            offset_range = self.log.window_extent(window)
        if offset_range is None:
            offset_range = (0, self.log.watermark)
        params_key = json.dumps(params, sort_keys=True) if params is not None else None
        hits = []
        for entry in self.registry_snapshot():
            if entry.kind != kind:
                continue
            if params_key is not None and json.dumps(entry.params, sort_keys=True) != params_key:
                continue
            clipped = entry.coverage.clip(*offset_range)
            if not clipped.empty:
                hits.append(replace(entry, coverage=clipped))
        return hits

    def rebuild(self, instance_id: str) -> dict[str, Structure]:
        """Offline re-run of an instance's spec over exactly its recorded coverage."""
        inst = self.instances[instance_id]
        cov = self.coverage_of(instance_id)
        records: list[tuple[int, int, bytes]] = []
        for lo, hi in cov.intervals:
            records.extend(self.log.iter_records(lo, hi))
        built, _ = run_spec_over(inst.spec, records, self.log.segment_lo)
        return built

    def fused_dump(self) -> dict | None:
        return None if self._runner is None else self._runner.dag.dump()
