from __future__ import annotations

import json
import subprocess
import sys

import pytest

from fluidstream.generate import (
    GenParams,
    SPAM_ACTOR_ID,
    SPAM_TARGET_REPO_ID,
    SPAM_TARGET_REPO_NAME,
)
from fluidstream.scenario import Scenario, run_scenario, trace_from_hours

GEN = {"hours": 4, "base_rate": 500, "seed": 21, "spam_hours": [2, 4]}

Q1 = {"window": {"relative_hours": 1},
      "predicates": [{"field": "type", "eq": "PullRequestEvent"}],
      "group_by": "repo.name", "top_k": 3}
Q2 = {"window": {"relative_hours": 1},
      "predicates": [{"field": "repo.id", "eq": SPAM_TARGET_REPO_ID}],
      "group_by": "actor.login", "top_k": 3}
Q3 = {"window": {"relative_hours": 1},
      "predicates": [{"field": "actor.id", "eq": SPAM_ACTOR_ID}],
      "group_by": "repo.name", "top_k": 3}


def timeline():
    return [
        {"at_hours": 1.5, "do": "query", "label": "Q1", "query": Q1},
        {"at_hours": 2.5, "do": "query", "label": "Q2", "query": Q2},
        {"at_hours": 3.5, "do": "query", "label": "Q3", "query": Q3},
    ]


def scenario_doc(strategy: str, actions=None, **extra) -> dict:
    return {"name": f"test-{strategy}", "strategy": strategy, "speedup": 0,
            "generator": GEN, "actions": actions if actions is not None else timeline(),
            **extra}


class TestBaselineStrategy:
    def test_q1_uses_type_index_q2_q3_fall_back_to_raw(self):
        report = run_scenario(Scenario.from_json(scenario_doc("baseline")))
        by_label = {q["label"]: q for q in report.queries}
        assert "index_probe" in by_label["Q1"]["parts"]
        assert by_label["Q2"]["parts"] == "raw_scan"
        assert by_label["Q3"]["parts"] == "raw_scan"
        assert by_label["Q3"]["rows"][0]["key"] == SPAM_TARGET_REPO_NAME


class TestFluidManualStrategy:
    def test_scripted_prefilter_accelerates_shifted_interest(self):
        actions = [
            {"at_hours": 1.5, "do": "query", "label": "Q1", "query": Q1},
            {"at_hours": 2.0, "do": "start_dpr",
             "prefilter": {"field": "repo.id", "value": SPAM_TARGET_REPO_ID,
                           "keep": ["actor.login"]}},
            {"at_hours": 3.2, "do": "query", "label": "Q2", "query": Q2},
            {"at_hours": 3.3, "do": "stop_dpr",
             "spec_id": f"sc-pf-repo.id={SPAM_TARGET_REPO_ID}"},
            {"at_hours": 3.4, "do": "start_dpr", "index_on": "actor.id"},
            {"at_hours": 3.9, "do": "query", "label": "Q3", "query": Q3},
        ]
        report = run_scenario(Scenario.from_json(scenario_doc("fluid-manual", actions)))
        by_label = {q["label"]: q for q in report.queries}
        assert "filtered_scan" in by_label["Q2"]["parts"]
        assert "index_probe" in by_label["Q3"]["parts"]

    def test_unknown_action_reference_aborts(self):
        actions = [{"at_hours": 1.0, "do": "stop_dpr", "spec_id": "never-started"}]
        with pytest.raises(RuntimeError):
            run_scenario(Scenario.from_json(scenario_doc("fluid-manual", actions)))


class TestStrategyInvariance:
    def test_identical_rows_across_strategies(self):
        rows_by_strategy = {}
        for strategy in ("baseline", "fluid-auto", "excessive"):
            doc = scenario_doc(strategy)
            if strategy == "fluid-auto":
                doc["budget_hours"] = [[0.0, 12.0], [2.0, 0.0], [3.0, 12.0]]
            report = run_scenario(Scenario.from_json(doc))
            rows_by_strategy[strategy] = [(q["label"], json.dumps(q["rows"]))
                                          for q in report.queries]
        assert rows_by_strategy["baseline"] == rows_by_strategy["fluid-auto"]
        assert rows_by_strategy["baseline"] == rows_by_strategy["excessive"]


class TestReplayDeterminism:
    def test_same_scenario_same_rows_and_units(self):
        doc = scenario_doc("fluid-auto")
        doc["budget_hours"] = [[0.0, 10.0], [1.5, 0.0], [2.5, 10.0]]
        a = run_scenario(Scenario.from_json(doc))
        b = run_scenario(Scenario.from_json(doc))
        assert [q["rows"] for q in a.queries] == [q["rows"] for q in b.queries]
        assert [(r["start_ms"], r["records"], round(r["units_total"], 6))
                for r in a.intervals] == \
               [(r["start_ms"], r["records"], round(r["units_total"], 6))
                for r in b.intervals]


class TestFluidAuto:
    def test_manager_starts_and_respects_zero_budget(self):
        actions = timeline() + [
            {"at_hours": 2.6, "do": "query", "label": "Q2", "query": Q2},
            {"at_hours": 2.7, "do": "query", "label": "Q2", "query": Q2},
        ]
        doc = scenario_doc("fluid-auto", actions)
        doc["budget_hours"] = [[0.0, 14.0], [3.0, 0.0]]
        report = run_scenario(Scenario.from_json(doc))
        managed = [r for r in report.intervals if r["units_manager"] > 0]
        assert managed, "manager never ran a routine"
        zero_rows = [r for r in report.intervals
                     if r["budget_upr"] == 0.0 and r["records"] > 0]
        for row in zero_rows:
            assert row["manager_rate"] <= 1e-9


class TestReportFiles:
    def test_report_writes_expected_files(self, tmp_path):
        doc = scenario_doc("baseline")
        run_scenario(Scenario.from_json(doc), report_dir=tmp_path,
                     trace=trace_from_hours(GenParams(**GEN).start_ts_ms, [(0.0, 5.0)]))
        for name in ("utilization.csv", "queries.csv", "summary.txt"):
            assert (tmp_path / name).exists(), name
        summary = (tmp_path / "summary.txt").read_text()
        assert "strategy: baseline" in summary
        assert "Q1" in summary


class TestCli:
    def test_gen_then_run(self, tmp_path):
        events = tmp_path / "events.jsonl.gz"
        out = subprocess.run(
            [sys.executable, "-m", "fluidstream.cli", "gen", "--seed", "3",
             "--hours", "2", "--base-rate", "200", "--spam-hours", "1:2",
             "--out", str(events)],
            capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert events.exists()

        scenario_path = tmp_path / "scenario.json"
        scenario_path.write_text(json.dumps(
            {"name": "cli", "strategy": "baseline", "speedup": 0,
             "actions": [{"at_hours": 1.5, "do": "query", "label": "Q1", "query": Q1}]}))
        report_dir = tmp_path / "report"
        out = subprocess.run(
            [sys.executable, "-m", "fluidstream.cli", "run",
             "--scenario", str(scenario_path), "--events", str(events),
             "--report", str(report_dir), "--speedup", "0"],
            capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert (report_dir / "summary.txt").exists()
        assert "Q1" in out.stdout

    def test_fusedump_cli(self, tmp_path):
        from fluidstream.operators import hash_index_spec
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text(json.dumps(hash_index_spec("repo.id").to_json()))
        b.write_text(json.dumps(hash_index_spec("actor.id").to_json()))
        out = subprocess.run(
            [sys.executable, "-m", "fluidstream.cli", "fusedump", "--level", "2",
             str(a), str(b)],
            capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        dump = json.loads(out.stdout)
        assert dump["level"] == 2
        assert sum(1 for n in dump["nodes"] if n["kind"] == "source") == 1
