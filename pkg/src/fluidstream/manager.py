"""Adaptive selection of preprocessing routines under a resource budget.

The loop: canonicalize observed queries into templates with decaying
weights, generate candidate routines from the forecast's logical shapes,
estimate each candidate's cost (sample run) and benefit (query cost-model
delta at projected coverage), pick a set with a knapsack approximation,
and reconcile the running set through the runtime's control queue.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

from .operators import (
    DprSpec,
    aggregate_spec,
    hash_index_spec,
    prefilter_spec,
    static_dag_unit_cost,
)
from .query import CostModel, MS_PER_HOUR, Query
from .runtime import DprRuntime, RUNNING, run_spec_over
from .structures import HASH_INDEX, MATERIALIZED_AGGREGATE, PREFILTERED_LOG

log = logging.getLogger(__name__)

MANAGER_OWNER = "manager"


@dataclass
class TemplateStat:
    shape: dict                      # canonical query shape, constants slotted out
    weight: float = 0.0
    last_ms: int = 0
    constants: dict[str, dict[Any, float]] = field(default_factory=dict)
    selectivity: float | None = None  # EMA of matched / window records

    def key(self) -> str:
        return json.dumps(self.shape, sort_keys=True)


def canonical_shape(query: Query) -> dict:
    window = query.window_spec
    return {
        "window_hours": window.get("relative_hours", "abs"),
        "predicate_fields": sorted(p.field for p in query.predicates),
        "group_by": query.group_by,
        "top_k": query.top_k,
    }


@dataclass
class DprCandidate:
    spec: DprSpec
    kind: str
    signature: str
    cost: float = 0.0
    benefit: float = 0.0
    sources: list[str] = field(default_factory=list)

    def ratio(self) -> float:
        return self.benefit / self.cost if self.cost > 0 else math.inf

    def to_json(self) -> dict:
        return {
            "spec_id": self.spec.id,
            "kind": self.kind,
            "signature": self.signature,
            "cost": round(self.cost, 4),
            "benefit": round(self.benefit, 4),
            "ratio": round(self.ratio(), 4) if self.cost > 0 else None,
            "sources": self.sources,
        }


def structure_signature(kind: str, params: dict) -> str:
    """Identity of the structure a routine builds, ignoring incidental params."""
    if kind == HASH_INDEX:
        body = {"field": params["field"]}
    elif kind == PREFILTERED_LOG:
        p = params["predicate"]
        body = {"field": p["field"], "value": p["value"]}
    else:
        body = {"group_by": params["group_by"], "prefilter": params.get("prefilter", [])}
    return json.dumps({"kind": kind, **body}, sort_keys=True)


class BudgetTrace:
    """Step function of available budget units per record over time."""

    def __init__(self, entries: list[tuple[int, float]]):
        self.entries = sorted(entries)
        if any(v < 0 for _, v in self.entries):
            raise ValueError("budget trace entries must be non-negative")

    @classmethod
    def from_csv(cls, text: str) -> "BudgetTrace":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("interval_start_ms"):
                continue
            start, value = line.split(",")
            entries.append((int(start), float(value)))
        return cls(entries)

    def to_csv(self) -> str:
        lines = ["interval_start_ms,budget_units_per_record"]
        lines += [f"{start},{value}" for start, value in self.entries]
        return "\n".join(lines) + "\n"

    def value_at(self, now_ms: int) -> float:
        value = 0.0
        for start, v in self.entries:
            if start <= now_ms:
                value = v
            else:
                break
        return value

    def boundaries(self) -> list[int]:
        return [start for start, _ in self.entries]


class DprManager:
    def __init__(self, runtime: DprRuntime, cost_model: CostModel | None = None,
                 half_life_s: float = 600.0, max_templates: int = 8,
                 min_active_s: float = 30.0, tick_period_s: float = 10.0,
                 sample_size: int = 1000, default_selectivity: float = 0.01,
                 prune_weight: float = 0.01):
        self.runtime = runtime
        self.cost_model = cost_model or CostModel()
        self.half_life_ms = int(half_life_s * 1000)
        self.max_templates = max_templates
        self.min_active_ms = int(min_active_s * 1000)
        self.tick_period_ms = int(tick_period_s * 1000)
        self.sample_size = sample_size
        self.default_selectivity = default_selectivity
        self.prune_weight = prune_weight
        self.mode = "manual"
        self.history: dict[str, TemplateStat] = {}
        self.last_selection: dict | None = None
        self.last_candidates: list[DprCandidate] = []

    # --- workload observation ---------------------------------------------------

    def _decay(self, weight: float, last_ms: int, now_ms: int) -> float:
        if weight == 0.0 or now_ms <= last_ms:
            return weight
        return weight * 2.0 ** (-(now_ms - last_ms) / self.half_life_ms)

    def observe_query(self, query: Query, stats: dict | None = None,
                      now_ms: int | None = None) -> TemplateStat:
        now_ms = self._now(now_ms)
        shape = canonical_shape(query)
        key = json.dumps(shape, sort_keys=True)
        stat = self.history.get(key)
        if stat is None:
            stat = TemplateStat(shape=shape)
            self.history[key] = stat
        stat.weight = self._decay(stat.weight, stat.last_ms, now_ms) + 1.0
        stat.last_ms = now_ms
        for p in query.predicates:
            per_field = stat.constants.setdefault(p.field, {})
            per_field[p.value] = per_field.get(p.value, 0.0) + 1.0
        if stats and stats.get("scanned"):
            observed = stats["matched"] / max(stats["scanned"], 1)
            if stat.selectivity is None:
                stat.selectivity = observed
            else:
                stat.selectivity = 0.7 * stat.selectivity + 0.3 * observed
        return stat

    def forecast(self, now_ms: int | None = None) -> list[tuple[TemplateStat, float]]:
        """Top templates by decayed weight, normalized to sum 1."""
        now_ms = self._now(now_ms)
        live = []
        for stat in self.history.values():
            w = self._decay(stat.weight, stat.last_ms, now_ms)
            if w >= self.prune_weight:
                live.append((stat, w))
        live.sort(key=lambda sw: (-sw[1], sw[0].key()))
        live = live[: self.max_templates]
        total = sum(w for _, w in live)
        if total <= 0:
            return []
        return [(stat, w / total) for stat, w in live]

    # --- candidate generation ----------------------------------------------------

    def generate_candidates(self, forecast: list[tuple[TemplateStat, float]]) -> list[DprCandidate]:
        running = self._running_signatures()
        out: dict[str, DprCandidate] = {}
        for stat, weight in forecast:
            fields = stat.shape["predicate_fields"]
            group_by = stat.shape["group_by"]
            for f in fields:
                self._add_candidate(out, hash_index_spec(f, spec_id=f"auto-idx-{f}"),
                                    HASH_INDEX, {"field": f}, stat)
                for value, share in self._stable_constants(stat, f):
                    keep = sorted({group_by, *(x for x in fields if x != f)})
                    spec = prefilter_spec(f, value, keep,
                                          spec_id=f"auto-pf-{f}={_slug(value)}")
                    self._add_candidate(out, spec, PREFILTERED_LOG,
                                        {"predicate": {"field": f, "op": "==", "value": value}},
                                        stat)
            stable = self._stable_prefilter(stat)
            if stable is not None:
                spec = aggregate_spec(group_by, stable,
                                      spec_id=f"auto-agg-{group_by}|" + ",".join(
                                          f"{f}={_slug(v)}" for f, v in stable))
                self._add_candidate(out, spec, MATERIALIZED_AGGREGATE, {
                    "group_by": group_by,
                    "prefilter": [{"field": f, "op": "==", "value": v} for f, v in stable],
                }, stat)
        return [c for c in out.values() if c.signature not in running]

    def _add_candidate(self, out: dict, spec: DprSpec, kind: str, params: dict,
                       stat: TemplateStat) -> None:
        sig = structure_signature(kind, params)
        cand = out.get(sig)
        if cand is None:
            cand = DprCandidate(spec=spec, kind=kind, signature=sig)
            out[sig] = cand
        if stat.key() not in cand.sources:
            cand.sources.append(stat.key())

    def _stable_constants(self, stat: TemplateStat, field_path: str,
                          min_count: float = 2.0) -> list[tuple[Any, float]]:
        per_field = stat.constants.get(field_path, {})
        total = sum(per_field.values())
        if total <= 0:
            return []
        return [(v, n / total) for v, n in sorted(per_field.items(), key=lambda kv: -kv[1])
                if n >= min_count]

    def _stable_prefilter(self, stat: TemplateStat) -> list[tuple[str, Any]] | None:
        fields = stat.shape["predicate_fields"]
        if not fields:
            return []  # plain group-by template: aggregate with no pre-filter
        chosen = []
        for f in fields:
            stable = self._stable_constants(stat, f)
            if not stable or stable[0][1] < 0.5:
                return None
            chosen.append((f, stable[0][0]))
        return chosen

    def _running_signatures(self) -> set[str]:
        sigs = set()
        for entry in self.runtime.registry_snapshot():
            inst = self.runtime.instances.get(entry.instance_id)
            if inst is not None and inst.status == RUNNING:
                sigs.add(structure_signature(entry.kind, entry.params))
        return sigs

    # --- cost and benefit ----------------------------------------------------------

    def estimate_cost(self, spec: DprSpec) -> float:
        """Budget units per record, from a sample run over recent records."""
        watermark = self.runtime.log.watermark
        lo = max(0, watermark - self.sample_size)
        sample = list(self.runtime.log.iter_records(lo, watermark))
        if not sample:
            if spec.declared_cost_hint is not None:
                return spec.declared_cost_hint
            return static_dag_unit_cost(spec)
        _, stats = run_spec_over(spec, sample, self.runtime.log.segment_lo)
        return stats.units_total() / len(sample)

    def live_cost(self, instance_id: str) -> float | None:
        return self.runtime.meter.rate(instance_id)

    def estimate_benefit(self, candidate: DprCandidate,
                         forecast: list[tuple[TemplateStat, float]],
                         horizon_records: int, rate_per_ms: float) -> float:
        """Expected query cost-model units saved per forecast unit, with the
        candidate's coverage projected from now to the tick horizon."""
        cm = self.cost_model
        by_key = {stat.key(): (stat, w) for stat, w in forecast}
        total = 0.0
        for source in candidate.sources:
            if source not in by_key:
                continue
            stat, weight = by_key[source]
            hours = stat.shape["window_hours"]
            if hours == "abs":
                hours = 2.0
            window_records = max(1, int(hours * MS_PER_HOUR * rate_per_ms))
            covered = min(window_records, horizon_records)
            if covered <= 0:
                continue
            sel = stat.selectivity if stat.selectivity is not None else self.default_selectivity
            without = cm.raw_scan_cost * window_records + cm.stitch_cost
            share = 1.0
            if candidate.kind == HASH_INDEX:
                path = cm.index_probe_fixed_cost + cm.index_probe_posting_cost * sel * covered
            elif candidate.kind == PREFILTERED_LOG:
                pred = json.loads(candidate.signature)
                path = cm.filtered_scan_cost * sel * covered
                shares = dict(self._stable_constants(stat, pred["field"], min_count=0.0))
                share = shares.get(pred["value"], 0.0)
            else:
                path = cm.aggregate_read_cost * max(1, covered // self.runtime.log.config.seal_record_count)
            parts = 1 if covered >= window_records else 2
            withc = (cm.raw_scan_cost * (window_records - covered) + path
                     + cm.stitch_cost * parts)
            total += weight * share * max(0.0, without - withc)
        return total

    # --- selection -------------------------------------------------------------------

    def select(self, candidates: list[DprCandidate], budget: float) -> list[DprCandidate]:
        """Greedy by benefit/cost, then the better of the bundle and the best
        single item; guaranteed at least half the exact optimum."""
        if budget <= 0:
            return []
        feasible = [c for c in candidates if c.cost <= budget and c.benefit > 0]
        ordered = sorted(feasible, key=lambda c: (-c.ratio(), c.signature))
        bundle: list[DprCandidate] = []
        used = 0.0
        for cand in ordered:
            if used + cand.cost <= budget:
                bundle.append(cand)
                used += cand.cost
        best_single = max(feasible, key=lambda c: (c.benefit, c.signature), default=None)
        bundle_value = sum(c.benefit for c in bundle)
        if best_single is not None and best_single.benefit > bundle_value:
            return [best_single]
        return bundle

    # --- reconciliation ----------------------------------------------------------------

    def reconcile(self, chosen: list[DprCandidate], budget: float,
                  now_ms: int | None = None) -> dict:
        """Start chosen routines, stop unchosen manager-owned ones.

        An unchosen routine younger than the minimum active duration survives
        unless keeping it would overrun the interval budget; budget adherence
        wins over thrash protection.
        """
        now_ms = self._now(now_ms)
        chosen_sigs = {c.signature for c in chosen}
        running = [inst for inst in self.runtime.instances.values()
                   if inst.owner == MANAGER_OWNER and inst.status == RUNNING]
        stops: list = []
        keeps: list = []
        for inst in running:
            sig = self._instance_signature(inst)
            if sig in chosen_sigs:
                chosen_sigs.discard(sig)
                keeps.append(inst)
            elif now_ms - inst.started_at_ms >= self.min_active_ms:
                stops.append(inst)
            else:
                keeps.append(inst)  # young; protected from thrash for now

        def rate_of(inst) -> float:
            live = self.live_cost(inst.instance_id)
            return live if live is not None else static_dag_unit_cost(inst.spec)

        to_start = [c for c in chosen if c.signature in chosen_sigs]
        projected = sum(rate_of(i) for i in keeps) + sum(c.cost for c in to_start)
        if projected > budget:
            protected = [i for i in keeps if self._instance_signature(i)
                         not in {c.signature for c in chosen}]
            protected.sort(key=lambda i: rate_of(i), reverse=True)
            for inst in protected:
                if projected <= budget:
                    break
                keeps.remove(inst)
                stops.append(inst)
                projected -= rate_of(inst)

        commands = {"started": [], "stopped": []}
        for inst in stops:
            self.runtime.stop_dpr(inst.instance_id, wait=False)
            commands["stopped"].append(inst.instance_id)
        for cand in to_start:
            instance_id, activation = self.runtime.start_dpr(cand.spec, owner=MANAGER_OWNER)
            # hysteresis is measured on the manager's clock
            self.runtime.instances[instance_id].started_at_ms = now_ms
            commands["started"].append({"instance_id": instance_id, "activation": activation})
        return commands

    def _instance_signature(self, inst) -> str:
        for sink in inst.spec.sinks():
            params = sink.params
            kind = params["structure"]
            return structure_signature(kind, params)
        return ""

    # --- the periodic cycle ----------------------------------------------------------------

    def tick(self, now_ms: int | None = None, budget: float | None = None,
             trace: BudgetTrace | None = None, horizon_ms: int | None = None) -> dict | None:
        """One manager cycle: forecast, generate, estimate, select, reconcile."""
        if self.mode != "auto":
            return None
        now_ms = self._now(now_ms)
        if budget is None:
            budget = trace.value_at(now_ms) if trace is not None else 0.0
        horizon_ms = horizon_ms or self.tick_period_ms
        rate = self._rate_per_ms()
        horizon_records = max(1, int(rate * horizon_ms))

        fc = self.forecast(now_ms)
        candidates = self.generate_candidates(fc)
        for cand in candidates:
            cand.cost = self.estimate_cost(cand.spec)
            cand.benefit = self.estimate_benefit(cand, fc, horizon_records, rate)
        chosen = self.select(candidates, budget)
        commands = self.reconcile(chosen, budget, now_ms)
        self.last_candidates = candidates
        self.last_selection = {
            "at_ms": now_ms,
            "budget": budget,
            "chosen": [c.to_json() for c in chosen],
            "total_cost": round(sum(c.cost for c in chosen), 4),
            "total_benefit": round(sum(c.benefit for c in chosen), 4),
            "commands": commands,
        }
        return self.last_selection

    def state(self, now_ms: int | None = None) -> dict:
        fc = self.forecast(now_ms)
        return {
            "mode": self.mode,
            "forecast": [{"template": stat.shape, "weight": round(w, 4)} for stat, w in fc],
            "candidates": [c.to_json() for c in self.last_candidates],
            "last_selection": self.last_selection,
        }

    def _rate_per_ms(self) -> float:
        log_ = self.runtime.log
        latest = log_.latest_event_ts()
        if latest is None or log_.watermark < 2:
            return 0.0
        first = log_.event_ts(0)
        span = max(latest - first, 1)
        return log_.watermark / span

    def _now(self, now_ms: int | None) -> int:
        return self.runtime.clock_ms() if now_ms is None else now_ms


# --- knapsack oracle ---------------------------------------------------------------

def knapsack_dp(costs: list[float], benefits: list[float], budget: float) -> tuple[float, list[int]]:
    """Exact 0/1 knapsack by dynamic programming over the Pareto frontier of
    (cost, value) states. Intended as a test oracle for small n."""
    if len(costs) > 24:
        raise ValueError("oracle solver is intended for small instances")
    states: list[tuple[float, float, int]] = [(0.0, 0.0, 0)]  # cost, value, chosen mask
    for i, (c, b) in enumerate(zip(costs, benefits)):
        merged = list(states)
        for cost, value, mask in states:
            nc = cost + c
            if nc <= budget:
                merged.append((nc, value + b, mask | (1 << i)))
        merged.sort(key=lambda s: (s[0], -s[1]))
        pruned: list[tuple[float, float, int]] = []
        best = -1.0
        for cost, value, mask in merged:
            if value > best:
                pruned.append((cost, value, mask))
                best = value
        states = pruned
    cost, value, mask = max(states, key=lambda s: s[1])
    return value, [i for i in range(len(costs)) if mask & (1 << i)]


def _slug(value: Any) -> str:
    return str(value).replace(" ", "_")[:32]
