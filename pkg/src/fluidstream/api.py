"""HTTP control plane over the engine.

Every state transition the console can make goes through these routes.
Malformed user input always comes back as a structured 400, never a 5xx.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .engine import Engine
from .operators import SpecError
from .query import QueryError


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


async def _body(request: Request) -> dict:
    try:
        doc = json.loads(await request.body() or b"null")
    except json.JSONDecodeError as exc:
        raise _BadRequest("invalid_json", f"request body is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise _BadRequest("invalid_json", "request body must be a JSON object")
    return doc


class _BadRequest(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message


def create_app(engine: Engine, console_dist: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="fluidstream", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(_BadRequest)
    async def bad_request(_req, exc: _BadRequest):
        return _error(400, exc.code, exc.message)

    @app.post("/dprs", status_code=201)
    async def start_dpr(request: Request):
        doc = await _body(request)
        try:
            return engine.start_dpr(doc)
        except SpecError as exc:
            return _error(400, "invalid_spec", str(exc))

    @app.delete("/dprs/{instance_id}")
    async def stop_dpr(instance_id: str):
        try:
            return engine.stop_dpr(instance_id)
        except KeyError:
            return _error(404, "unknown_instance", f"no instance {instance_id!r}")
        except SpecError as exc:
            return _error(409, "already_stopped", str(exc))

    @app.get("/dprs")
    async def list_dprs():
        return engine.list_dprs()

    @app.get("/registry")
    async def registry(kind: str | None = None, field: str | None = None):
        return engine.registry_entries(kind=kind, field_path=field)

    @app.post("/query")
    async def query(request: Request):
        doc = await _body(request)
        try:
            return engine.query(doc)
        except QueryError as exc:
            return _error(400, "invalid_query", str(exc))

    @app.get("/metrics")
    async def metrics(cursor: int | None = None):
        return engine.metrics(cursor=cursor)

    @app.post("/manager")
    async def manager_mode(request: Request):
        doc = await _body(request)
        mode = doc.get("mode")
        try:
            return engine.set_manager_mode(mode)
        except ValueError as exc:
            return _error(400, "invalid_mode", str(exc))

    @app.get("/manager")
    async def manager_state():
        return engine.manager_state()

    @app.get("/stream/status")
    async def stream_status():
        return engine.stream_status()

    dist = Path(console_dist) if console_dist else None
    if dist is not None and dist.exists():
        app.mount("/console", StaticFiles(directory=dist, html=True), name="console")

    return app
