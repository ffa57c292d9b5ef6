"""Acceptance suite. One test per criterion; each prints a PASS line with the
measured numbers so ratios land in the run log and in reports."""

from __future__ import annotations

import itertools
import json
import random
import time

import pytest

from fluidstream.generate import (
    GenParams,
    SPAM_ACTOR_ID,
    SPAM_TARGET_REPO_ID,
    generate_events,
)
from fluidstream.fusion import fuse
from fluidstream.log import LogConfig, RawLog
from fluidstream.manager import knapsack_dp
from fluidstream.operators import (
    DprSpec,
    OperatorNode,
    aggregate_spec,
    hash_index_spec,
    prefilter_spec,
)
from fluidstream.query import INDEX_PROBE, Query, QueryEngine, RAW_SCAN, raw_oracle
from fluidstream.runtime import DagRunner, DprRuntime, make_structure, run_spec_over
from fluidstream.scenario import Scenario, run_scenario
from fluidstream.structures import content_digest

from test_query import build_entry

HOUR = 3_600_000


def _ok(name: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


# --- 1. oracle equivalence ----------------------------------------------------------

class TestOracleEquivalence:
    """1,000 randomized (stream, registry, query) cases answer exactly like the
    independent full-scan oracle."""

    N_STREAMS = 20
    CASES_PER_STREAM = 50

    def _stream(self, rng: random.Random) -> RawLog:
        log = RawLog(config=LogConfig(seal_record_count=rng.choice([64, 128, 256]),
                                      seal_seconds=None))
        params = GenParams(
            hours=rng.randrange(2, 5),
            base_rate=rng.randrange(400, 1200),
            seed=rng.randrange(10_000),
            disorder_ms=rng.choice([0, 20_000, 60_000]),
            spam_hours=(1, 3) if rng.random() < 0.4 else None,
            spike_hours=(0, 2) if rng.random() < 0.4 else None,
            malformed_per_hour=rng.choice([0, 0, 3]),
        )
        for payload in generate_events(params):
            log.ingest(payload)
        return log

    def test_execute_equals_oracle_on_1000_cases(self):
        rng = random.Random(20_250_601)
        pred_pool = [("repo.id", lambda r: 1000 + r.randrange(12)),
                     ("type", lambda r: r.choice(["PushEvent", "PullRequestEvent",
                                                  "IssuesEvent", "WatchEvent"])),
                     ("actor.id", lambda r: 2000 + r.randrange(10)),
                     ("actor.login", lambda r: f"user{r.randrange(10)}"),
                     ("payload.action", lambda r: r.choice(["opened", "closed"]))]
        group_pool = ["repo.name", "actor.login", "type", "repo.id"]
        cases = 0
        for s in range(self.N_STREAMS):
            log = self._stream(rng)
            engine = QueryEngine(log)
            watermark = log.watermark
            for c in range(self.CASES_PER_STREAM):
                entries = []
                for j in range(rng.randrange(0, 6)):
                    lo = rng.randrange(0, max(watermark - 10, 1))
                    hi = min(lo + rng.randrange(50, watermark), watermark)
                    pick = rng.random()
                    field, val_fn = rng.choice(pred_pool)
                    if pick < 0.5:
                        spec = hash_index_spec(field)
                    elif pick < 0.85:
                        spec = prefilter_spec(field, val_fn(rng),
                                              [rng.choice(group_pool)])
                    else:
                        spec = aggregate_spec(rng.choice(group_pool),
                                              [(field, val_fn(rng))])
                    entries.append(build_entry(log, spec, lo, hi, f"s{s}c{c}j{j}"))
                preds = []
                for field, val_fn in rng.sample(pred_pool, k=rng.randrange(0, 3)):
                    preds.append({"field": field, "eq": val_fn(rng)})
                query = Query.from_json({
                    "window": {"relative_hours": rng.choice([0.2, 0.5, 1, 2, 6])},
                    "predicates": preds,
                    "group_by": rng.choice(group_pool),
                    "top_k": rng.randrange(1, 8)})
                rows, plan, _ = engine.answer(query, entries)
                expected = raw_oracle(log, query)
                assert rows == expected, (s, c, plan.to_json())
                cases += 1
        assert cases == self.N_STREAMS * self.CASES_PER_STREAM == 1000
        _ok("oracle equivalence", f"{cases} randomized cases exact")


# --- 2. plan-stitching speedup ---------------------------------------------------------

class TestPlanStitchingSpeedup:
    """1M-event stream, hash index covering the most recent 10 of 16 hours;
    stitched plans beat all-raw scans on every window and by >=2x inside
    coverage at <=1% selectivity."""

    def test_stitched_beats_raw_everywhere(self):
        params = GenParams(hours=16, base_rate=62_500, seed=160, disorder_ms=20_000,
                           rate_curve="flat")
        log = RawLog(config=LogConfig(seal_record_count=4096, seal_seconds=None))
        runtime = DprRuntime(log, fusion_level=2)
        started = False
        index_start_ts = params.start_ts_ms + 6 * HOUR
        for payload in generate_events(params):
            offset = log.ingest(payload)
            if not started and log.event_ts(offset) >= index_start_ts:
                runtime.pump()
                runtime.start_dpr(hash_index_spec("repo.id"))
                started = True
        runtime.pump()
        assert log.watermark >= 1_000_000
        snapshot = runtime.registry_snapshot()
        engine = QueryEngine(log)

        # pick a repo with <=1% selectivity but enough mass to be interesting
        idx = snapshot[0].structure
        total = log.watermark
        repo_id = None
        for value, plist in sorted(idx.postings.items(), key=lambda kv: -len(kv[1])):
            if len(plist) <= total * 0.005:
                repo_id = value
                break
        assert repo_id is not None

        ratios = {}
        for hours in (2, 4, 6, 12):
            doc = {"window": {"relative_hours": hours},
                   "predicates": [{"field": "repo.id", "eq": repo_id}],
                   "group_by": "actor.login", "top_k": 3}
            query = Query.from_json(doc)
            plan = engine.plan(query, snapshot)
            t0 = time.perf_counter()
            rows, _ = engine.execute(plan)
            stitched_s = time.perf_counter() - t0

            raw_plan = engine.plan(query, [])
            assert [p.path for p in raw_plan.parts] == [RAW_SCAN]
            t0 = time.perf_counter()
            raw_rows, _ = engine.execute(raw_plan)
            raw_s = time.perf_counter() - t0

            assert rows == raw_rows == raw_oracle(log, query)
            assert stitched_s < raw_s, f"{hours}h: stitched {stitched_s:.3f}s raw {raw_s:.3f}s"
            ratios[hours] = raw_s / stitched_s
            if hours <= 10:
                sel = len(idx.postings[repo_id]) / total
                assert sel <= 0.01
                assert [p.path for p in plan.parts] == [INDEX_PROBE]
                assert ratios[hours] >= 2.0, f"{hours}h speedup {ratios[hours]:.1f}x"
        _ok("plan-stitching speedup",
            "; ".join(f"{h}h: {r:.1f}x" for h, r in sorted(ratios.items())))


# --- 3. fusion ordering -------------------------------------------------------------------

def _fusion_workload():
    """Two routines sharing a parse+filter prefix and an expensive transform."""
    prefix = [
        OperatorNode("src", "source", {}),
        OperatorNode("p", "parse_fields",
                     {"fields": ["payload.comment.body", "type"]}, ("src",)),
        OperatorNode("f", "filter",
                     {"field": "type", "op": "==", "value": "IssueCommentEvent"}, ("p",)),
        OperatorNode("t", "transform",
                     {"token": "heavy_signature", "field": "payload.comment.body",
                      "out": "sig", "rounds": 64}, ("f",)),
    ]
    a = DprSpec("rude-check", tuple(prefix + [
        OperatorNode("k", "sink", {"structure": "hash_index", "field": "sig"}, ("t",))]))
    b = DprSpec("repro-check", tuple(prefix + [
        OperatorNode("t2", "transform", {"token": "token_count",
                                         "field": "payload.comment.body",
                                         "out": "n"}, ("t",)),
        OperatorNode("k", "sink", {"structure": "hash_index", "field": "n"}, ("t2",))]))
    return a, b


class TestFusionOrdering:
    def test_invocations_throughput_and_content(self):
        a, b = _fusion_workload()
        params = GenParams(hours=2, base_rate=12_000, seed=55)
        batch = [(i, 0, p) for i, p in enumerate(generate_events(params))]

        results = {}
        for level in (0, 1, 2):
            dag = fuse([a, b], level)
            structures = {(s.id, sink.id): make_structure(sink)
                          for s in (a, b) for sink in s.sinks()}
            runner = DagRunner(dag, {s.id: (0, None) for s in (a, b)}, structures,
                               lambda o: 0)
            t0 = time.perf_counter()
            stats = runner.process(batch)
            elapsed = time.perf_counter() - t0
            parse_calls = sum(n for node_id, n in stats.invocations.items()
                              if dag.by_id()[node_id].kind == "parse_fields")
            results[level] = {
                "invocations": sum(stats.invocations.values()),
                "parse_calls": parse_calls,
                "throughput": len(batch) / elapsed,
                "digests": {k: content_digest(s) for k, s in structures.items()},
            }

        # exact parse counts: once per record at level >= 1, twice at level 0
        assert results[0]["parse_calls"] == 2 * len(batch)
        assert results[1]["parse_calls"] == len(batch)
        assert results[2]["parse_calls"] == len(batch)
        assert (results[2]["invocations"] < results[1]["invocations"]
                < results[0]["invocations"])

        t0, t1, t2 = (results[lvl]["throughput"] for lvl in (0, 1, 2))
        assert t1 >= 1.03 * t0, f"level1 {t1:.0f}/s vs level0 {t0:.0f}/s"
        assert t2 >= 1.5 * t0, f"level2 {t2:.0f}/s vs level0 {t0:.0f}/s"

        # fused structures content-identical to unfused
        solo = {}
        for spec in (a, b):
            built, _ = run_spec_over(spec, batch, lambda o: 0)
            for sink_id, s in built.items():
                solo[(spec.id, sink_id)] = content_digest(s)
        for level in (0, 1, 2):
            assert results[level]["digests"] == solo
        _ok("fusion ordering",
            f"level1/level0 {t1 / t0:.2f}x, level2/level0 {t2 / t0:.2f}x")


# --- 4. lifecycle safety ----------------------------------------------------------------

class TestLifecycleSafety:
    """Fixed-rate ingestion with 50 randomized start/stop actions: no record
    lost, structures content-exact, throughput within 10% of the no-routine
    baseline."""

    RATE = 4000  # records/s, paced
    TOTAL = 24_000

    def _paced_run(self, churn: bool) -> tuple[float, RawLog, DprRuntime]:
        rng = random.Random(4242)
        log = RawLog(config=LogConfig(seal_record_count=1024, seal_seconds=None))
        runtime = DprRuntime(log, fusion_level=2, batch_size=256)
        runtime.start_executor()
        specs = [hash_index_spec(f, spec_id=f"l-{f}")
                 for f in ("repo.id", "actor.login", "type", "payload.action")]
        running: dict[str, str] = {}
        actions = 0
        events = generate_events(GenParams(hours=4, base_rate=self.TOTAL // 4, seed=77,
                                           rate_curve="flat"))
        interval = 1.0 / self.RATE
        start = time.perf_counter()
        next_due = start
        try:
            for i, payload in enumerate(events):
                now = time.perf_counter()
                if now < next_due:
                    time.sleep(next_due - now)
                next_due += interval
                log.ingest(payload)
                if churn and actions < 50 and i % (self.TOTAL // 51) == 0 and i > 0:
                    spec = rng.choice(specs)
                    if spec.id in running:
                        runtime.stop_dpr(running.pop(spec.id), wait=False)
                    else:
                        iid, _ = runtime.start_dpr(spec)
                        running[spec.id] = iid
                    actions += 1
            elapsed = time.perf_counter() - start
            runtime.drain()
        finally:
            runtime.stop_executor()
        if churn:
            assert actions == 50
        return self.TOTAL / elapsed, log, runtime

    def test_churn_preserves_records_structures_and_throughput(self):
        baseline_rate, _, _ = self._paced_run(churn=False)
        churn_rate, log, runtime = self._paced_run(churn=True)

        assert log.watermark == self.TOTAL  # every ingest call landed
        rebuilt_ok = 0
        for iid, inst in runtime.instances.items():
            fresh = runtime.rebuild(iid)
            for sink_id, structure in fresh.items():
                live = runtime._structures[(iid, sink_id)]
                assert content_digest(live) == content_digest(structure), iid
                rebuilt_ok += 1
        assert rebuilt_ok > 0
        ratio = churn_rate / baseline_rate
        assert ratio > 0.9, f"churn throughput {churn_rate:.0f}/s vs {baseline_rate:.0f}/s"
        _ok("lifecycle safety",
            f"{rebuilt_ok} structures rebuilt exactly, throughput ratio {ratio:.2f}")


# --- 5. knapsack quality ---------------------------------------------------------------------

class TestKnapsackQuality:
    def test_worked_example_matches_enumeration(self):
        costs, benefits, budget = [5, 5, 6], [10, 6, 13], 10
        value, chosen = knapsack_dp(costs, benefits, budget)
        best = 0
        for mask in itertools.product([0, 1], repeat=3):
            c = sum(ci for m, ci in zip(mask, costs) if m)
            if c <= budget:
                best = max(best, sum(bi for m, bi in zip(mask, benefits) if m))
        assert value == best == 16
        assert chosen == [0, 1]

    def test_500_random_instances(self):
        from fluidstream.manager import DprCandidate
        from fluidstream.operators import hash_index_spec as hs

        def greedy_select(cands, budget):
            feasible = [c for c in cands if c.cost <= budget and c.benefit > 0]
            ordered = sorted(feasible, key=lambda c: (-c.ratio(), c.signature))
            bundle, used = [], 0.0
            for cand in ordered:
                if used + cand.cost <= budget:
                    bundle.append(cand)
                    used += cand.cost
            best = max(feasible, key=lambda c: (c.benefit, c.signature), default=None)
            if best is not None and best.benefit > sum(c.benefit for c in bundle):
                return [best]
            return bundle

        rng = random.Random(500_500)
        worst = 1.0
        for trial in range(500):
            n = rng.randrange(1, 21)
            cands = [DprCandidate(spec=hs(f"f{i}"), kind="hash_index", signature=f"s{i}",
                                  cost=float(rng.randrange(1, 40)),
                                  benefit=float(rng.randrange(0, 100)))
                     for i in range(n)]
            budget = float(rng.randrange(0, 120))
            picked = greedy_select(cands, budget)
            total_cost = sum(c.cost for c in picked)
            assert total_cost <= budget + 1e-9, trial
            opt, _ = knapsack_dp([c.cost for c in cands],
                                 [c.benefit for c in cands], budget)
            value = sum(c.benefit for c in picked)
            assert value >= 0.5 * opt - 1e-9, (trial, value, opt)
            if opt > 0:
                worst = min(worst, value / opt)
        _ok("knapsack quality", f"500 instances, worst value ratio {worst:.3f}")


# --- 6 & 7. budget adherence + strategy-invariant answers -------------------------------------

GEN_SCENARIO = {"hours": 8, "base_rate": 1500, "seed": 88,
                "spike_hours": [1, 3], "spam_hours": [4, 8]}

Q1 = {"window": {"relative_hours": 2},
      "predicates": [{"field": "type", "eq": "PullRequestEvent"}],
      "group_by": "repo.name", "top_k": 3}
Q2 = {"window": {"relative_hours": 2},
      "predicates": [{"field": "repo.id", "eq": SPAM_TARGET_REPO_ID}],
      "group_by": "actor.login", "top_k": 3}
Q3 = {"window": {"relative_hours": 2},
      "predicates": [{"field": "actor.id", "eq": SPAM_ACTOR_ID}],
      "group_by": "repo.name", "top_k": 3}


def _timeline():
    out = []
    for h in (1.4, 2.2, 3.0):
        out.append({"at_hours": h, "do": "query", "label": "Q1", "query": Q1})
    for h in (4.4, 5.0, 5.4):
        out.append({"at_hours": h, "do": "query", "label": "Q2", "query": Q2})
    for h in (6.2, 6.8, 7.4):
        out.append({"at_hours": h, "do": "query", "label": "Q3", "query": Q3})
    return out


# hours 6 and 7 of the trace have no spare capacity at all
BUDGET_HOURS = [[0.0, 16.0], [3.0, 10.0], [6.0, 0.0], [7.5, 12.0]]


def _run(strategy: str, provisioned_upr=None):
    doc = {"name": f"acc-{strategy}", "strategy": strategy, "speedup": 0,
           "generator": GEN_SCENARIO, "actions": _timeline()}
    if strategy == "fluid-auto":
        doc["budget_hours"] = BUDGET_HOURS
    return run_scenario(Scenario.from_json(doc), provisioned_upr=provisioned_upr)


@pytest.fixture(scope="module")
def reports():
    baseline = _run("baseline")
    # provision exactly the peak-hour consumption of the baseline strategy
    provisioned = max(r["units_total"] / r["records"]
                      for r in baseline.intervals if r["records"])
    return {
        "baseline": baseline,
        "provisioned": provisioned,
        "fluid-auto": _run("fluid-auto", provisioned_upr=provisioned + 16.0),
        "excessive": _run("excessive", provisioned_upr=provisioned + 16.0),
    }


class TestBudgetAdherenceAndStrategies:

    def test_budget_adherence_and_adaptation(self, reports):
        fluid = reports["fluid-auto"]
        managed = [r for r in fluid.intervals if r["units_manager"] > 0]
        assert managed, "manager never scheduled any routine"
        for row in fluid.intervals:
            assert row["manager_rate"] <= row["budget_upr"] + 1e-6, row
        zero_rows = [r for r in fluid.intervals
                     if r["budget_upr"] == 0.0 and r["records"] > 0]
        assert zero_rows
        for row in zero_rows:
            assert row["units_manager"] == pytest.approx(0.0, abs=1e-9), row
        _ok("budget adherence",
            f"{len(fluid.intervals)} intervals, {len(zero_rows)} zero-budget all idle")

    def test_fluid_stays_within_provisioned_excessive_does_not(self, reports):
        fluid, excessive = reports["fluid-auto"], reports["excessive"]
        fluid_over = [r for r in fluid.intervals if r.get("over_provisioned")]
        excessive_over = [r for r in excessive.intervals if r.get("over_provisioned")]
        assert not fluid_over, fluid_over
        assert excessive_over, "excessive strategy never exceeded provisioned capacity"
        peak = max(excessive.intervals,
                   key=lambda r: r["units_total"] / max(r["records"], 1))
        factor = (peak["units_total"] / peak["records"]) / (reports["provisioned"] + 16.0)
        _ok("provisioned capacity",
            f"excessive exceeded in {len(excessive_over)} intervals (peak {factor:.2f}x)")

    def test_strategy_invariant_answers(self, reports):
        rows = {}
        for name in ("baseline", "fluid-auto", "excessive"):
            rows[name] = [(q["label"], json.dumps(q["rows"], sort_keys=True))
                          for q in reports[name].queries]
        assert rows["baseline"] == rows["fluid-auto"] == rows["excessive"]
        assert len(rows["baseline"]) == 9
        _ok("strategy-invariant answers", "9 scripted queries identical across 3 strategies")
