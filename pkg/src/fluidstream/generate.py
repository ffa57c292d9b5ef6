"""Synthetic GH-Archive-shaped event stream generator.

Deterministic for a seed: a diurnal rate curve, Zipf-skewed repository and
actor popularity, and optional planted anomalies (one repository with a
pull-request spike, one actor spamming a single repository) that make the
canned exploration queries discriminative.
"""

from __future__ import annotations

import gzip
import json
import math
import random
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

MS_PER_HOUR = 3_600_000

EVENT_TYPES = [
    ("PushEvent", 0.48),
    ("PullRequestEvent", 0.16),
    ("IssuesEvent", 0.10),
    ("IssueCommentEvent", 0.10),
    ("WatchEvent", 0.10),
    ("CreateEvent", 0.06),
]

_ACTIONS = {
    "PullRequestEvent": ["opened", "closed", "reopened"],
    "IssuesEvent": ["opened", "closed"],
    "IssueCommentEvent": ["created"],
}

_WORDS = ("build fails on main cannot reproduce please rebase thanks looks good "
          "needs tests flaky timeout regression confirmed fixed duplicate stale "
          "performance memory crash startup config docs typo").split()

SPIKE_REPO_ID = 999
SPIKE_REPO_NAME = "hotspot/surge"
SPAM_ACTOR_ID = 4999
SPAM_ACTOR_LOGIN = "replaybot"
SPAM_TARGET_REPO_ID = 998
SPAM_TARGET_REPO_NAME = "victim/flooded"


@dataclass
class GenParams:
    hours: int = 24
    base_rate: int = 2000            # events per hour before the curve
    seed: int = 1
    start_ts_ms: int = 1_748_736_000_000  # 2025-06-01T00:00:00Z
    rate_curve: str = "diurnal"      # or "flat"
    peak_hour: int = 14
    curve_amplitude: float = 0.5
    repo_count: int = 400
    actor_count: int = 300
    disorder_ms: int = 30_000
    zipf_s: float = 1.1
    spike_hours: tuple[int, int] | None = None   # PR surge on SPIKE_REPO
    spam_hours: tuple[int, int] | None = None    # one actor floods SPAM_TARGET_REPO
    anomaly_fraction: float = 0.3
    malformed_per_hour: int = 0

    def hourly_count(self, hour: int) -> int:
        if self.rate_curve == "flat":
            return self.base_rate
        mult = 1.0 + self.curve_amplitude * math.sin(
            2 * math.pi * (hour - self.peak_hour + 6) / 24.0)
        return max(1, round(self.base_rate * mult))


class _Zipf:
    def __init__(self, n: int, s: float):
        weights = [1.0 / (i + 1) ** s for i in range(n)]
        total = sum(weights)
        acc = 0.0
        self.cum = []
        for w in weights:
            acc += w / total
            self.cum.append(acc)

    def draw(self, rng: random.Random) -> int:
        return bisect_left(self.cum, rng.random())


def _iso(ts_ms: int) -> str:
    from datetime import datetime, timezone
    return datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def generate_events(params: GenParams) -> Iterator[bytes]:
    """Yield newline-free JSON payloads in ingestion order, deterministically."""
    rng = random.Random(params.seed)
    repo_zipf = _Zipf(params.repo_count, params.zipf_s)
    actor_zipf = _Zipf(params.actor_count, params.zipf_s)
    type_cum = []
    acc = 0.0
    for _name, w in EVENT_TYPES:
        acc += w
        type_cum.append(acc)

    for hour in range(params.hours):
        hour_start = params.start_ts_ms + hour * MS_PER_HOUR
        n = params.hourly_count(hour)
        tags = ["base"] * n
        if params.spike_hours and params.spike_hours[0] <= hour < params.spike_hours[1]:
            tags += ["spike"] * int(n * params.anomaly_fraction)
        if params.spam_hours and params.spam_hours[0] <= hour < params.spam_hours[1]:
            tags += ["spam"] * int(n * params.anomaly_fraction)
        tags += ["malformed"] * params.malformed_per_hour
        rng.shuffle(tags)
        slots = sorted(rng.randrange(MS_PER_HOUR) for _ in range(len(tags)))

        for slot, tag in zip(slots, tags):
            ts = hour_start + slot
            if params.disorder_ms:
                ts += rng.randrange(-params.disorder_ms // 2, params.disorder_ms // 2 + 1)
            ts = min(max(ts, hour_start), hour_start + MS_PER_HOUR - 1)
            if tag == "base":
                r = rng.random()
                etype = EVENT_TYPES[bisect_left(type_cum, min(r, type_cum[-1]))][0]
                repo = repo_zipf.draw(rng)
                actor = actor_zipf.draw(rng)
                yield _event(rng, etype, ts, 1000 + repo, f"org{repo % 40}/repo{repo}",
                             2000 + actor, f"user{actor}")
            elif tag == "spike":
                actor = actor_zipf.draw(rng)
                yield _event(rng, "PullRequestEvent", ts, SPIKE_REPO_ID, SPIKE_REPO_NAME,
                             2000 + actor, f"user{actor}")
            elif tag == "spam":
                etype = rng.choice(["PushEvent", "IssueCommentEvent", "IssuesEvent"])
                yield _event(rng, etype, ts, SPAM_TARGET_REPO_ID, SPAM_TARGET_REPO_NAME,
                             SPAM_ACTOR_ID, SPAM_ACTOR_LOGIN)
            else:
                yield b'{"broken": true, "created_at": 12,'  # unparsable on purpose


def _event(rng: random.Random, etype: str, ts_ms: int, repo_id: int, repo_name: str,
           actor_id: int, actor_login: str) -> bytes:
    doc = {
        "id": str(rng.randrange(10**12)),
        "type": etype,
        "created_at": _iso(ts_ms),
        "repo": {"id": repo_id, "name": repo_name},
        "actor": {"id": actor_id, "login": actor_login},
        "public": True,
    }
    payload: dict = {}
    if etype in _ACTIONS:
        payload["action"] = rng.choice(_ACTIONS[etype])
    if etype == "PullRequestEvent":
        payload["number"] = rng.randrange(1, 5000)
        payload["pull_request"] = {"base": {"repo": {"id": repo_id, "name": repo_name}}}
    if etype == "IssueCommentEvent":
        payload["comment"] = {"body": " ".join(rng.choices(_WORDS, k=rng.randrange(4, 14)))}
    if etype == "IssuesEvent":
        payload["issue"] = {"number": rng.randrange(1, 3000)}
    if payload:
        doc["payload"] = payload
    if rng.random() < 0.3:
        doc["org"] = {"id": 9000 + repo_id % 25, "login": f"org{repo_id % 25}"}
    return json.dumps(doc, separators=(",", ":")).encode()


def write_events(path: str | Path, params: GenParams) -> int:
    """Write the generated stream as newline-delimited JSON; .gz means gzip."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    count = 0
    with opener(path, "wb") as fh:
        for payload in generate_events(params):
            fh.write(payload)
            fh.write(b"\n")
            count += 1
    return count


def read_events(path: str | Path) -> Iterator[bytes]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        for line in fh:
            line = line.rstrip(b"\n")
            if line:
                yield line
