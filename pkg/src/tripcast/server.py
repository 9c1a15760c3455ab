"""HTTP gateway: network state, online stepping, forecasts, what-if queries.

Single session per process. All bodies are JSON with a ``schema_version``
field. Error mapping: 400 invalid body, 404 unknown segment, 409 warm-up
not complete. ``/whatif`` never mutates session state; replaying the same
request between two ``/step`` calls returns identical bodies.
"""

from __future__ import annotations

import os
import threading

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .checkpoint import load_model
from .service import (RequestError, Session, UnknownSegmentError, WarmUpError,
                      SCHEMA_VERSION)

DEFAULT_PORT = 8765


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="tripcast gateway")
    # local operator tooling: the console is served from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    lock = threading.Lock()  # /step ordering is strictly FIFO

    @app.exception_handler(RequestError)
    async def bad_request(_, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(UnknownSegmentError)
    async def unknown_segment(_, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(WarmUpError)
    async def warm_up(_, exc):
        return JSONResponse(status_code=409, content={
            "error": str(exc), "warm_up": True, "schema_version": SCHEMA_VERSION})

    @app.get("/network")
    def network():
        return session.model.net.to_dict()

    @app.get("/state")
    def state():
        with lock:
            return session.state()

    @app.post("/step")
    async def step(request: Request):
        body = await _json_body(request)
        with lock:
            return session.step(body)

    @app.get("/forecast")
    def forecast():
        with lock:
            return session.forecast()

    @app.post("/whatif")
    async def whatif(request: Request):
        body = await _json_body(request)
        with lock:
            return session.whatif(body)

    return app


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception as exc:
        raise RequestError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise RequestError("body must be a JSON object")
    return body


def session_from_checkpoint(ckpt_path, phi: int = 12, online: bool = True,
                            lr: float = 1e-3, preload=None) -> Session:
    """Load a model checkpoint into a fresh session, optionally pre-feeding data.

    ``preload`` is an iterable of IntervalFeatures replayed through the
    online loop before serving starts (convenience for demos/tests).
    """
    model = load_model(ckpt_path)
    session = Session(model, phi=phi, online=online, lr=lr)
    if preload is not None:
        for features in preload:
            session.loop.step(features)
    return session


def serve(session: Session, port: int | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn

    port = port or int(os.environ.get("TRIPCAST_PORT", DEFAULT_PORT))
    uvicorn.run(create_app(session), host=host, port=port, log_level="info")
