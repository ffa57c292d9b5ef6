"""Regenerate tests/fixtures/engine-responses.json from a real engine.

Run from the repository root with the Python package installed:

    python3 frontend/scripts/capture_fixtures.py
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from fluidstream.api import create_app
from fluidstream.engine import Engine, EngineConfig
from fluidstream.generate import GenParams, generate_events
from fluidstream.operators import hash_index_spec, prefilter_spec

OUT = Path(__file__).parent.parent / "tests" / "fixtures" / "engine-responses.json"


def main() -> None:
    eng = Engine(EngineConfig(seal_record_count=256, seal_seconds=None))
    client = TestClient(create_app(eng))

    events = list(generate_events(GenParams(hours=3, base_rate=600, seed=14, spam_hours=(1, 3))))
    for p in events[:1000]:
        eng.ingest(p)
    client.post("/dprs", json=hash_index_spec("repo.id").to_json())
    eng.pump()
    for p in events[1000:]:
        eng.ingest(p)
    eng.pump()
    pf = client.post("/dprs", json=prefilter_spec("repo.id", 998, ["actor.login"]).to_json()).json()
    stopped = client.delete(f"/dprs/{pf['instance_id']}").json()

    q2 = {"window": {"relative_hours": 2},
          "predicates": [{"field": "repo.id", "eq": 998}],
          "group_by": "actor.login", "top_k": 3}
    fixtures = {
        "dprs": client.get("/dprs").json(),
        "registry": client.get("/registry").json(),
        "query_request": q2,
        "query_response": client.post("/query", json=q2).json(),
        "metrics_first": client.get("/metrics").json(),
        "manager": client.get("/manager").json(),
        "status": client.get("/stream/status").json(),
        "stop_response": stopped,
    }
    fixtures["metrics_second"] = client.get(
        "/metrics", params={"cursor": fixtures["metrics_first"]["cursor"]}).json()
    OUT.write_text(json.dumps(fixtures, indent=1))
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
