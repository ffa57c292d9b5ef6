"""Scripted replay scenarios: strategies, action timelines, reports.

The driver is single threaded and runs on stream time: it ingests events in
order, advances a virtual clock from probed event timestamps, and fires
actions, budget-interval boundaries and manager cycles at exact stream
positions. Replays of the same scenario and seed are therefore fully
deterministic, including budget-unit accounting; only wall-clock latency
columns vary run to run.

Control actions go through the HTTP control plane (served in-process), so a
scenario exercises the same surface the console uses.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .engine import Engine, EngineConfig
from .fields import probe_timestamp
from .generate import GenParams, generate_events
from .manager import BudgetTrace
from .operators import hash_index_spec, prefilter_spec, aggregate_spec

MS_PER_HOUR = 3_600_000

STRATEGIES = ("baseline", "fluid-manual", "fluid-auto", "excessive")

BASELINE_INDEX_FIELDS = ("type", "created_at")
EXCESSIVE_EXTRA_FIELDS = ("repo.id", "repo.name", "actor.id", "actor.login",
                          "payload.action", "org.login")


@dataclass
class Scenario:
    name: str
    strategy: str
    actions: list[dict] = field(default_factory=list)
    generator: dict | None = None
    budget_hours: list[tuple[float, float]] | None = None
    speedup: float = 60.0
    bucket_ms: int = MS_PER_HOUR
    fusion_level: int = 2
    manager_min_active_s: float = 30.0
    tick_hours: float = 0.25  # manager cadence in stream time

    @classmethod
    def from_json(cls, doc: dict) -> "Scenario":
        strategy = doc.get("strategy", "baseline")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        actions = sorted(doc.get("actions", []), key=lambda a: a.get("at_hours", 0.0))
        return cls(
            name=doc.get("name", "scenario"),
            strategy=strategy,
            actions=actions,
            generator=doc.get("generator"),
            budget_hours=[tuple(e) for e in doc["budget_hours"]] if "budget_hours" in doc else None,
            speedup=doc.get("speedup", 60.0),
            bucket_ms=doc.get("bucket_ms", MS_PER_HOUR),
            fusion_level=doc.get("fusion_level", 2),
            manager_min_active_s=doc.get("manager_min_active_s", 30.0),
            tick_hours=doc.get("tick_hours", 0.25),
        )


@dataclass
class ScenarioReport:
    name: str
    strategy: str
    intervals: list[dict] = field(default_factory=list)
    queries: list[dict] = field(default_factory=list)
    events: int = 0
    provisioned_upr: float | None = None

    def query_rows(self, label: str | None = None) -> list[dict]:
        return [q for q in self.queries if label is None or q["label"] == label]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "utilization.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["interval_start_ms", "records", "units_total", "units_user",
                        "units_manager", "budget_units_per_record",
                        "provisioned_units", "over_provisioned"])
            for row in self.intervals:
                w.writerow([row["start_ms"], row["records"], f"{row['units_total']:.3f}",
                            f"{row['units_user']:.3f}", f"{row['units_manager']:.3f}",
                            f"{row['budget_upr']:.4f}",
                            f"{row['provisioned_units']:.3f}" if row.get("provisioned_units") is not None else "",
                            int(bool(row.get("over_provisioned")))])
        with open(out / "queries.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["at_ms", "label", "latency_ms", "est_cost", "parts", "rows"])
            for q in self.queries:
                w.writerow([q["at_ms"], q["label"], f"{q['latency_ms']:.3f}",
                            q["est_cost"], q["parts"], json.dumps(q["rows"])])
        (out / "summary.txt").write_text(self.summary())

    def summary(self) -> str:
        lines = [f"scenario: {self.name}", f"strategy: {self.strategy}",
                 f"events: {self.events}", ""]
        by_label: dict[str, list[dict]] = {}
        for q in self.queries:
            by_label.setdefault(q["label"], []).append(q)
        if by_label:
            lines.append(f"{'query':<10}{'runs':>6}{'mean_ms':>12}{'max_ms':>12}")
            for label in sorted(by_label):
                runs = by_label[label]
                lat = [q["latency_ms"] for q in runs]
                lines.append(f"{label:<10}{len(runs):>6}{sum(lat)/len(lat):>12.2f}{max(lat):>12.2f}")
            lines.append("")
        if self.intervals:
            over = sum(1 for r in self.intervals if r.get("over_provisioned"))
            lines.append(f"intervals: {len(self.intervals)}, over provisioned budget: {over}")
            total_units = sum(r["units_total"] for r in self.intervals)
            lines.append(f"total units consumed: {total_units:.1f}")
        return "\n".join(lines) + "\n"


class ScenarioRunner:
    def __init__(self, scenario: Scenario, events: Iterable[bytes] | None = None,
                 trace: BudgetTrace | None = None, provisioned_upr: float | None = None,
                 pump_every: int = 512):
        self.scenario = scenario
        if events is None:
            if scenario.generator is None:
                raise ValueError("scenario needs either an events source or generator params")
            events = generate_events(GenParams(**scenario.generator))
        self.events = events
        self.trace = trace
        self.provisioned_upr = provisioned_upr
        self.pump_every = pump_every
        self.now_ms = 0
        self.engine = Engine(EngineConfig(
            seal_seconds=None,               # deterministic sealing in replay
            fusion_level=scenario.fusion_level,
            bucket_ms=scenario.bucket_ms,
            manager_min_active_s=scenario.manager_min_active_s,
        ), clock_ms=lambda: self.now_ms)
        from fastapi.testclient import TestClient
        from .api import create_app
        self.client = TestClient(create_app(self.engine))
        self.report = ScenarioReport(scenario.name, scenario.strategy,
                                     provisioned_upr=provisioned_upr)
        self._last_totals: dict[str, float] = {}
        self._last_records = 0
        self._interval_start: int | None = None

    # --- setup -------------------------------------------------------------------

    def _initial_dprs(self) -> None:
        fields = list(BASELINE_INDEX_FIELDS)
        if self.scenario.strategy == "excessive":
            fields += list(EXCESSIVE_EXTRA_FIELDS)
        for f in fields:
            resp = self.client.post("/dprs", json=hash_index_spec(f, f"base-idx-{f}").to_json())
            assert resp.status_code == 201, resp.text
        if self.scenario.strategy == "fluid-auto":
            self.engine.budget_trace = self.trace
            resp = self.client.post("/manager", json={"mode": "auto"})
            assert resp.status_code == 200, resp.text

    # --- main loop ------------------------------------------------------------------

    def run(self) -> ScenarioReport:
        actions = list(self.scenario.actions)
        start_ts: int | None = None
        boundaries: list[int] = []
        prev_ts: int | None = None
        a_idx = 0
        b_idx = 0
        count = 0

        for payload in self.events:
            ts = probe_timestamp(payload)
            if start_ts is None:
                start_ts = ts if ts is not None else 0
                self.now_ms = start_ts
                self._interval_start = start_ts
                boundaries = self._boundaries(start_ts)
                for a in actions:
                    a["_at_ms"] = start_ts + int(a.get("at_hours", 0.0) * MS_PER_HOUR)
                self._initial_dprs()
            if ts is not None and ts > self.now_ms:
                if self.scenario.speedup and prev_ts is not None and ts > prev_ts:
                    time.sleep(min((ts - prev_ts) / 1000.0 / self.scenario.speedup, 0.25))
                prev_ts = ts
                self.now_ms = ts
            while b_idx < len(boundaries) and boundaries[b_idx] <= self.now_ms:
                self._on_boundary(boundaries[b_idx],
                                  boundaries[b_idx + 1] if b_idx + 1 < len(boundaries) else None)
                b_idx += 1
            while a_idx < len(actions) and actions[a_idx]["_at_ms"] <= self.now_ms:
                self._run_action(actions[a_idx])
                a_idx += 1
            self.engine.ingest(payload)
            count += 1
            if count % self.pump_every == 0:
                self.engine.pump()

        self.engine.pump()
        while b_idx < len(boundaries) and boundaries[b_idx] <= self.now_ms:
            self._on_boundary(boundaries[b_idx], None)
            b_idx += 1
        while a_idx < len(actions):
            self._run_action(actions[a_idx])
            a_idx += 1
        self._sample_interval(end_ms=self.now_ms + 1)
        self.report.events = count
        return self.report

    def _boundaries(self, start_ts: int) -> list[int]:
        """Interval-sampling points: trace boundaries plus (for fluid-auto) a
        periodic manager-cycle grid, all in stream time."""
        points: set[int] = set()
        if self.trace is not None:
            points.update(b for b in self.trace.boundaries() if b > start_ts)
        if self.scenario.strategy == "fluid-auto":
            step = max(int(self.scenario.tick_hours * MS_PER_HOUR), 1)
            points.update(range(start_ts + step, start_ts + 48 * MS_PER_HOUR, step))
        return sorted(points)

    def _on_boundary(self, at_ms: int, next_ms: int | None) -> None:
        self.engine.pump()
        self._sample_interval(end_ms=at_ms)
        if self.scenario.strategy == "fluid-auto":
            horizon = (next_ms - at_ms) if next_ms else None
            self.engine.manager_tick(now_ms=at_ms, horizon_ms=horizon)
            self.engine.pump()

    def _sample_interval(self, end_ms: int) -> None:
        totals = self.client.get("/metrics").json()["totals"]
        units = totals["units_by_instance"]
        owners = {d["instance_id"]: d["owner"] for d in self.client.get("/dprs").json()}
        delta_user = delta_manager = 0.0
        for iid, u in units.items():
            d = u - self._last_totals.get(iid, 0.0)
            if owners.get(iid) == "manager":
                delta_manager += d
            else:
                delta_user += d
        records = totals["watermark"] - self._last_records
        self._last_totals = dict(units)
        self._last_records = totals["watermark"]
        if records == 0 and delta_user == 0 and delta_manager == 0:
            self._interval_start = end_ms
            return
        budget_upr = self.trace.value_at(self._interval_start) if self.trace else 0.0
        row = {
            "start_ms": self._interval_start,
            "end_ms": end_ms,
            "records": records,
            "units_user": delta_user,
            "units_manager": delta_manager,
            "units_total": delta_user + delta_manager,
            "budget_upr": budget_upr,
            "manager_rate": (delta_manager / records) if records else 0.0,
        }
        if self.provisioned_upr is not None:
            row["provisioned_units"] = self.provisioned_upr * records
            row["over_provisioned"] = row["units_total"] > row["provisioned_units"] + 1e-9
        self.report.intervals.append(row)
        self._interval_start = end_ms

    # --- actions ----------------------------------------------------------------------

    def _run_action(self, action: dict) -> None:
        self.engine.pump()
        kind = action["do"]
        if kind == "query":
            resp = self.client.post("/query", json=action["query"])
            if resp.status_code != 200:
                raise RuntimeError(f"query action failed: {resp.text}")
            body = resp.json()
            self.report.queries.append({
                "at_ms": action["_at_ms"],
                "label": action.get("label", "q"),
                "latency_ms": body["latency_ms"],
                "rows": body["rows"],
                "est_cost": body["plan"]["est_cost"],
                "parts": "+".join(p["path"] for p in body["plan"]["parts"]) or "empty",
            })
        elif kind == "start_dpr":
            spec = self._action_spec(action)
            resp = self.client.post("/dprs", json=spec)
            if resp.status_code != 201:
                raise RuntimeError(f"start_dpr action failed: {resp.text}")
        elif kind == "stop_dpr":
            target = action["spec_id"]
            running = [d for d in self.client.get("/dprs").json()
                       if d["spec_id"] == target and d["status"] == "running"]
            if not running:
                raise RuntimeError(f"stop_dpr action: no running instance of {target!r}")
            resp = self.client.delete(f"/dprs/{running[0]['instance_id']}")
            if resp.status_code != 200:
                raise RuntimeError(f"stop_dpr action failed: {resp.text}")
        elif kind == "set_manager_mode":
            resp = self.client.post("/manager", json={"mode": action["mode"]})
            if resp.status_code != 200:
                raise RuntimeError(f"set_manager_mode failed: {resp.text}")
        else:
            raise RuntimeError(f"unknown scenario action: {kind!r}")

    def _action_spec(self, action: dict) -> dict:
        if "spec" in action:
            return action["spec"]
        if "index_on" in action:
            return hash_index_spec(action["index_on"], f"sc-idx-{action['index_on']}").to_json()
        if "prefilter" in action:
            p = action["prefilter"]
            value = p["value"]
            return prefilter_spec(p["field"], value, p.get("keep", []),
                                  f"sc-pf-{p['field']}={value}").to_json()
        if "aggregate" in action:
            a = action["aggregate"]
            return aggregate_spec(a["group_by"], [tuple(x) for x in a.get("prefilter", [])]).to_json()
        raise RuntimeError("start_dpr action needs 'spec', 'index_on', 'prefilter' or 'aggregate'")


def trace_from_hours(start_ts: int, entries: list[tuple[float, float]]) -> BudgetTrace:
    """Budget trace from (hour offset, units/record) pairs relative to stream start."""
    return BudgetTrace([(start_ts + int(h * MS_PER_HOUR), v) for h, v in entries])


def run_scenario(scenario: Scenario, events: Iterable[bytes] | None = None,
                 trace: BudgetTrace | None = None, provisioned_upr: float | None = None,
                 report_dir: str | Path | None = None) -> ScenarioReport:
    if trace is None and scenario.budget_hours:
        # late bind against the stream start; peek at generator params
        gen = scenario.generator or {}
        start = gen.get("start_ts_ms", GenParams().start_ts_ms)
        trace = trace_from_hours(start, scenario.budget_hours)
    runner = ScenarioRunner(scenario, events=events, trace=trace,
                            provisioned_upr=provisioned_upr)
    report = runner.run()
    if report_dir is not None:
        report.write(report_dir)
    return report
