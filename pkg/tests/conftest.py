from __future__ import annotations

import json

import pytest

from fluidstream.log import LogConfig, RawLog

BASE_TS = 1_748_736_000_000  # 2025-06-01T00:00:00Z


def iso(ts_ms: int) -> str:
    from datetime import datetime, timezone
    return datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def gh_event(ts_ms: int, etype: str = "PushEvent", repo_id: int = 1001,
             repo_name: str = "org1/repo1", actor_id: int = 2001,
             actor_login: str = "user1", action: str | None = None,
             extra: dict | None = None) -> bytes:
    doc = {
        "type": etype,
        "created_at": iso(ts_ms),
        "repo": {"id": repo_id, "name": repo_name},
        "actor": {"id": actor_id, "login": actor_login},
    }
    if action is not None:
        doc["payload"] = {"action": action}
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":")).encode()


def fill(log: RawLog, n: int, start_ts: int = BASE_TS, step_ms: int = 1000, **kw) -> list[int]:
    return [log.ingest(gh_event(start_ts + i * step_ms, **kw)) for i in range(n)]


@pytest.fixture
def mem_log() -> RawLog:
    return RawLog(config=LogConfig(seal_record_count=100, seal_seconds=None))
