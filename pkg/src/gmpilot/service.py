"""HTTP facade: query sessions with live step streaming, ingestion, stats.

Query runs stream as server-sent events, one event per agent step, with a
strictly increasing `seq` and exactly one terminal `final` or `error`
event. Ingestion is serialized behind the engine's writer lock and swaps
in a fresh index snapshot; readers keep the previous snapshot until then.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .agent import ReactState
from .engine import Engine
from .errors import EmptyQuery, GmpilotError, SessionBusy, UnknownKind


class SessionStatus(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    FAILED = "failed"


@dataclass
class Session:
    session_id: str
    created_at: datetime
    status: SessionStatus = SessionStatus.IDLE
    history: list[dict] = field(default_factory=list)


def _sse_frame(event_type: str, seq: int, payload: dict) -> str:
    data = json.dumps({"type": event_type, "seq": seq, "payload": payload}, ensure_ascii=False)
    return f"event: {event_type}\ndata: {data}\n\n"


def _error_body(err: Exception, status: int) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": type(err).__name__, "detail": str(err)},
    )


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="gmpilot", docs_url=None, redoc_url=None)
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    @app.post("/v1/sessions")
    def create_session() -> dict:
        session = Session(session_id=uuid.uuid4().hex, created_at=datetime.now(timezone.utc))
        with sessions_lock:
            sessions[session.session_id] = session
        return {"session_id": session.session_id}

    @app.post("/v1/sessions/{session_id}/query")
    async def query(session_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            body = {}
        query_text = body.get("query", "") if isinstance(body, dict) else ""
        with sessions_lock:
            session = sessions.get(session_id)
            if session is None:
                return _error_body(GmpilotError(f"no session {session_id}"), 404)
            if not query_text.strip():
                return _error_body(EmptyQuery("query must be non-empty"), 400)
            if session.status == SessionStatus.RUNNING:
                return _error_body(SessionBusy(session_id), 409)
            session.status = SessionStatus.RUNNING

        def stream():
            seq = 0
            state = ReactState()
            outcome = SessionStatus.IDLE
            try:
                for step in engine.query_steps(query_text, state=state):
                    payload = step.to_dict()
                    if step.kind.value == "final" and state.answer is not None:
                        payload["answer"] = state.answer.to_dict()
                    yield _sse_frame(step.kind.value, seq, payload)
                    seq += 1
            except GmpilotError as err:
                outcome = SessionStatus.FAILED
                yield _sse_frame(
                    "error",
                    seq,
                    {"error": type(err).__name__, "detail": str(err), "steps": len(state.steps)},
                )
            except Exception as err:  # never drop the connection silently
                outcome = SessionStatus.FAILED
                yield _sse_frame(
                    "error", seq, {"error": "InternalError", "detail": str(err)}
                )
            finally:
                with sessions_lock:
                    session.status = outcome
                    session.history.append(
                        {
                            "query": query_text,
                            "steps": [s.to_dict() for s in state.steps],
                            "answer": state.answer.to_dict() if state.answer else None,
                        }
                    )

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.post("/v1/ingest/{kind}")
    async def ingest(kind: str, request: Request):
        try:
            payload = (await request.body()).decode("utf-8")
        except UnicodeDecodeError as err:
            return _error_body(err, 422)
        try:
            report = engine.ingest_payload(kind, payload)
        except UnknownKind as err:
            return _error_body(err, 404)
        except GmpilotError as err:
            return _error_body(err, 422)
        return report

    @app.get("/v1/stats")
    def stats() -> dict:
        return engine.stats()

    @app.get("/v1/healthz")
    def healthz() -> dict:
        return {"status": "ok", "snapshot_id": engine.snapshot.snapshot_id}

    @app.get("/v1/chunks/{chunk_id}")
    def get_chunk(chunk_id: str):
        chunk = engine.get_chunk(chunk_id)
        if chunk is None:
            return _error_body(GmpilotError(f"no chunk {chunk_id}"), 404)
        return chunk.to_dict()

    return app


def serve(engine: Engine, bind_addr: str = "127.0.0.1:8000") -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    host, _, port = bind_addr.partition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port or "8000"))
