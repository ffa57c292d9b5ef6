from __future__ import annotations

import random

import pytest

from fluidstream.log import LogConfig, RawLog
from fluidstream.operators import DprSpec, aggregate_spec, hash_index_spec, prefilter_spec
from fluidstream.query import (
    AGGREGATE_READ,
    FILTERED_SCAN,
    INDEX_PROBE,
    Query,
    QueryEngine,
    QueryError,
    RAW_SCAN,
    decompose,
    raw_oracle,
    resolve_window,
)
from fluidstream.runtime import SnapshotEntry, run_spec_over
from fluidstream.structures import Coverage

from conftest import BASE_TS, fill, gh_event

HOUR = 3_600_000


def build_entry(log: RawLog, spec: DprSpec, lo: int, hi: int, tag: str) -> SnapshotEntry:
    """Materialize a structure over [lo, hi) and wrap it as a registry snapshot entry."""
    built, _ = run_spec_over(spec, log.iter_records(lo, hi), log.segment_lo)
    sink = spec.sinks()[0]
    structure = built[sink.id]
    return SnapshotEntry(structure_id=tag, instance_id=tag, kind=structure.kind,
                         params=structure.params, structure=structure,
                         coverage=Coverage.of((lo, hi)))


def diverse_log(n=2000, seed=3, seal=128) -> RawLog:
    log = RawLog(config=LogConfig(seal_record_count=seal, seal_seconds=None))
    rng = random.Random(seed)
    types = ["PushEvent", "PullRequestEvent", "IssuesEvent", "WatchEvent"]
    for i in range(n):
        ts = BASE_TS + i * 2000 + rng.randrange(0, 40) * 1000 - 20_000
        log.ingest(gh_event(max(ts, BASE_TS), etype=rng.choice(types),
                            repo_id=1000 + rng.randrange(8),
                            repo_name=f"org/r{rng.randrange(8)}",
                            actor_id=2000 + rng.randrange(6),
                            actor_login=f"user{rng.randrange(6)}"))
    return log


def q2(repo_id=1003, hours=1, k=3) -> Query:
    return Query.from_json({
        "window": {"relative_hours": hours},
        "predicates": [{"field": "repo.id", "eq": repo_id}],
        "group_by": "actor.login",
        "top_k": k,
    })


class TestDecompose:
    def test_no_candidates_single_segment(self):
        assert decompose((0, 100), []) == [(0, 100)]

    def test_partial_suffix_coverage_two_segments(self):
        # index covers the most recent stretch of the window only
        assert decompose((0, 160), [Coverage.of((60, 160))]) == [(0, 60), (60, 160)]

    def test_overlapping_coverages(self):
        segs = decompose((0, 150), [Coverage.of((0, 100)), Coverage.of((50, 150))])
        assert segs == [(0, 50), (50, 100), (100, 150)]

    def test_randomized_partition_and_constant_applicability(self):
        rng = random.Random(8)
        for _ in range(50):
            extent = (rng.randrange(0, 50), rng.randrange(60, 200))
            covs = []
            for _ in range(rng.randrange(0, 5)):
                a = rng.randrange(0, 200)
                b = a + rng.randrange(1, 80)
                covs.append(Coverage.of((a, b)))
            segs = decompose(extent, covs)
            assert segs[0][0] == extent[0] and segs[-1][1] == extent[1]
            for (l1, h1), (l2, h2) in zip(segs, segs[1:]):
                assert h1 == l2
            for lo, hi in segs:
                for cov in covs:
                    inside = [cov.contains_offset(o) for o in range(lo, hi)]
                    assert all(inside) or not any(inside)


class TestPlan:
    def test_fully_covered_window_single_probe(self):
        log = diverse_log(600)
        entry = build_entry(log, hash_index_spec("repo.id"), 0, 600, "idx")
        engine = QueryEngine(log)
        plan = engine.plan(q2(hours=2), [entry])
        assert [p.path for p in plan.parts] == [INDEX_PROBE]

    def test_partial_suffix_coverage_stitches_raw_plus_probe(self):
        log = diverse_log(1600)
        entry = build_entry(log, hash_index_spec("repo.id"), 1000, 1600, "idx")
        engine = QueryEngine(log)
        plan = engine.plan(q2(hours=1), [entry])
        paths = [p.path for p in plan.parts]
        assert paths == [RAW_SCAN, INDEX_PROBE]
        assert plan.parts[0].hi == plan.parts[1].lo == 1000

    def test_plan_cost_never_exceeds_all_raw(self):
        rng = random.Random(17)
        log = diverse_log(1200)
        engine = QueryEngine(log)
        for trial in range(30):
            entries = []
            for j in range(rng.randrange(0, 5)):
                lo = rng.randrange(0, 1100)
                hi = lo + rng.randrange(50, 600)
                kind = rng.choice(["idx", "pf", "agg"])
                if kind == "idx":
                    spec = hash_index_spec("repo.id")
                elif kind == "pf":
                    spec = prefilter_spec("repo.id", 1003, ["actor.login"])
                else:
                    spec = aggregate_spec("actor.login", [("repo.id", 1003)])
                entries.append(build_entry(log, spec, lo, min(hi, 1200), f"s{trial}-{j}"))
            plan = engine.plan(q2(hours=1), entries)
            assert plan.est_cost <= plan.all_raw_cost + 1e-9

    def test_adjacent_same_path_segments_coalesce(self):
        log = diverse_log(900)
        e1 = build_entry(log, prefilter_spec("repo.id", 1003, ["actor.login"]), 100, 400, "a")
        e2 = build_entry(log, hash_index_spec("actor.login"), 200, 300, "b")  # irrelevant to q2
        engine = QueryEngine(log)
        plan = engine.plan(q2(hours=2), [e1, e2])
        # boundary at 200/300 from the irrelevant structure must not split the scan
        filtered = [p for p in plan.parts if p.path == FILTERED_SCAN]
        assert len(filtered) == 1
        assert (filtered[0].lo, filtered[0].hi) == (100, 400)

    def test_cost_monotone_as_coverage_grows(self):
        log = diverse_log(1500)
        engine = QueryEngine(log)
        query = q2(hours=1)
        prev = None
        for lo in (1400, 1100, 800, 500, 200, 0):
            entry = build_entry(log, hash_index_spec("repo.id"), lo, 1500, f"i{lo}")
            cost = engine.plan(query, [entry]).est_cost
            if prev is not None:
                assert cost <= prev + 1e-9
            prev = cost

    def test_segment_partition_invariant(self):
        log = diverse_log(1000)
        engine = QueryEngine(log)
        entry = build_entry(log, hash_index_spec("repo.id"), 300, 700, "i")
        plan = engine.plan(q2(hours=2), [entry])
        assert plan.parts[0].lo == plan.extent[0]
        assert plan.parts[-1].hi == plan.extent[1]
        for a, b in zip(plan.parts, plan.parts[1:]):
            assert a.hi == b.lo


class TestExecute:
    def test_matches_oracle_with_mixed_structures(self):
        log = diverse_log(2000)
        engine = QueryEngine(log)
        entries = [
            build_entry(log, hash_index_spec("repo.id"), 500, 1500, "idx"),
            build_entry(log, prefilter_spec("repo.id", 1003, ["actor.login"]), 1200, 2000, "pf"),
            build_entry(log, aggregate_spec("actor.login", [("repo.id", 1003)]), 0, 900, "agg"),
        ]
        for hours in (0.5, 1, 2):
            query = q2(hours=hours)
            rows, plan, _ = engine.answer(query, entries)
            assert rows == raw_oracle(log, query), hours

    def test_zero_matching_records(self):
        log = diverse_log(300)
        engine = QueryEngine(log)
        rows, _, _ = engine.answer(q2(repo_id=424242), [])
        assert rows == []

    def test_planted_skew_ranks_first(self):
        log = RawLog(config=LogConfig(seal_record_count=64, seal_seconds=None))
        rng = random.Random(5)
        for i in range(500):
            heavy = rng.random() < 0.4
            log.ingest(gh_event(
                BASE_TS + i * 1000,
                repo_id=1111 if heavy else 1000 + rng.randrange(5),
                actor_id=2001 if heavy else 2000 + rng.randrange(5),
                actor_login="poweruser" if heavy else f"user{rng.randrange(5)}"))
        engine = QueryEngine(log)
        rows, _, _ = engine.answer(q2(repo_id=1111, hours=2, k=1), [])
        assert rows[0]["key"] == "poweruser"
        assert rows == raw_oracle(log, q2(repo_id=1111, hours=2, k=1))

    def test_aggregate_read_serves_whole_sealed_chunks(self):
        log = diverse_log(1024, seal=128)
        engine = QueryEngine(log)
        query = Query.from_json({
            "window": {"relative_hours": 3},
            "predicates": [{"field": "repo.id", "eq": 1003}],
            "group_by": "actor.login", "top_k": 5})
        entry = build_entry(log, aggregate_spec("actor.login", [("repo.id", 1003)]), 0, 1024, "agg")
        plan = engine.plan(query, [entry])
        assert [p.path for p in plan.parts] == [AGGREGATE_READ]
        rows, _ = engine.execute(plan)
        assert rows == raw_oracle(log, query)

    def test_snapshot_pins_extent_against_later_ingest(self):
        log = diverse_log(400)
        engine = QueryEngine(log)
        query = q2(hours=6)
        plan = engine.plan(query, [])
        before = engine.execute(plan)[0]
        fill(log, 300, start_ts=BASE_TS + 10 * HOUR, repo_id=1003)
        assert engine.execute(plan)[0] == before

    def test_deterministic_tie_break_by_key(self):
        log = RawLog(config=LogConfig(seal_seconds=None))
        for i in range(10):
            log.ingest(gh_event(BASE_TS + i * 1000, repo_id=1003,
                                actor_login=f"user{i % 5}"))
        engine = QueryEngine(log)
        rows, _, _ = engine.answer(q2(hours=1, k=3), [])
        assert [r["key"] for r in rows] == ["user0", "user1", "user2"]


class TestOracle:
    def test_empty_log(self):
        log = RawLog(config=LogConfig(seal_seconds=None))
        assert raw_oracle(log, q2()) == []

    def test_single_matching_record(self):
        log = RawLog(config=LogConfig(seal_seconds=None))
        log.ingest(gh_event(BASE_TS, repo_id=1003, actor_login="me"))
        assert raw_oracle(log, q2(hours=1)) == [{"key": "me", "count": 1}]

    def test_independent_of_registry(self):
        log = diverse_log(500)
        with_structs = raw_oracle(log, q2(hours=1))
        assert with_structs == raw_oracle(log, q2(hours=1))


class TestRandomizedExactness:
    def test_execute_equals_oracle_on_random_cases(self):
        rng = random.Random(123)
        log = diverse_log(3000, seed=77)
        engine = QueryEngine(log)
        group_fields = ["actor.login", "repo.name", "type"]
        pred_fields = [("repo.id", [1000 + i for i in range(8)]),
                       ("type", ["PushEvent", "PullRequestEvent", "IssuesEvent"]),
                       ("actor.id", [2000 + i for i in range(6)])]
        for case in range(100):
            entries = []
            for j in range(rng.randrange(0, 6)):
                lo = rng.randrange(0, 2900)
                hi = min(lo + rng.randrange(100, 1500), 3000)
                pick = rng.random()
                if pick < 0.45:
                    f, _vals = rng.choice(pred_fields)
                    spec = hash_index_spec(f)
                elif pick < 0.8:
                    f, vals = rng.choice(pred_fields[:2])
                    spec = prefilter_spec(f, rng.choice(vals), [rng.choice(group_fields)])
                else:
                    f, vals = rng.choice(pred_fields[:2])
                    spec = aggregate_spec(rng.choice(group_fields), [(f, rng.choice(vals))])
                entries.append(build_entry(log, spec, lo, hi, f"c{case}-{j}"))
            n_preds = rng.randrange(0, 3)
            preds = []
            for f, vals in rng.sample(pred_fields, k=n_preds):
                preds.append({"field": f, "eq": rng.choice(vals)})
            query = Query.from_json({
                "window": {"relative_hours": rng.choice([0.25, 0.5, 1, 2])},
                "predicates": preds,
                "group_by": rng.choice(group_fields),
                "top_k": rng.randrange(1, 6),
            })
            rows, plan, _ = engine.answer(query, entries)
            assert rows == raw_oracle(log, query), (case, plan.to_json())


class TestQueryValidation:
    def test_rejects_bad_window(self):
        with pytest.raises(QueryError):
            Query.from_json({"window": {}, "group_by": "x"})

    def test_rejects_zero_k(self):
        with pytest.raises(QueryError):
            Query.from_json({"window": {"relative_hours": 1}, "group_by": "x", "top_k": 0})

    def test_rejects_non_count_agg(self):
        with pytest.raises(QueryError):
            Query.from_json({"window": {"relative_hours": 1}, "group_by": "x", "agg": "sum"})

    def test_relative_window_anchors_on_latest_event(self):
        log = RawLog(config=LogConfig(seal_seconds=None))
        fill(log, 10)
        lo, hi = resolve_window({"relative_hours": 1}, log)
        assert hi == log.latest_event_ts() + 1
        assert hi - lo == HOUR
