"""HTTP/JSON status plane: a FastAPI app wrapping the admin service.

Every request authenticates by bearer token (minted from an admin kit) and
flows through the same AdminService.dispatch as the console, so allow/deny
decisions and audit records are identical across both surfaces.  Metrics
stream either by cursor long-poll or as server-sent events.
"""

from __future__ import annotations

import asyncio
import json
from typing import Optional

from fastapi import Depends, FastAPI, Request, Response, UploadFile
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..security.tokens import TokenError, verify_token
from .service import AdminService, Outcome


class ClientView(BaseModel):
    last_seen: float
    org: str = ""


class SystemView(BaseModel):
    server: str
    endpoint: str
    generation: int
    active: bool
    clients: dict[str, ClientView]
    settings: dict


class JobView(BaseModel):
    job_id: str
    name: str = ""
    state: str
    round: int = -1
    submitter: dict = {}
    detail: str = ""


class JobsResponse(BaseModel):
    jobs: list[JobView]


class ClientsResponse(BaseModel):
    clients: dict[str, ClientView]


class SubmitResponse(BaseModel):
    job_id: str


class AbortResponse(BaseModel):
    job_id: str
    state: str


class MetricEvent(BaseModel):
    cursor: int
    round: int
    accuracy: float
    loss: float


class MetricsResponse(BaseModel):
    events: list[MetricEvent]
    next: int


class ErrorBody(BaseModel):
    code: str
    message: str


_ERROR_STATUS = {"denied": 403, "not_found": 404, "bad_job": 400,
                 "bad_state": 409, "bad_value": 400, "unknown_verb": 400}


def _outcome_response(outcome: Outcome, ok_model=None):
    if outcome.header.get("ok"):
        result = outcome.header.get("result")
        return result if ok_model is None else ok_model(**result)
    error = outcome.header.get("error", {})
    status = _ERROR_STATUS.get(error.get("code", ""), 500)
    return JSONResponse(status_code=status, content={
        "code": error.get("code", "internal"),
        "message": error.get("message", "")})


def create_status_app(server, static_dir=None) -> FastAPI:
    app = FastAPI(title="flarelet status API", version="1")
    service = AdminService(server)

    def identity_from(request: Request):
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            return None
        try:
            return verify_token(header[7:].strip(), server.kit.root_public)
        except TokenError:
            return None

    def require_identity(request: Request):
        identity = identity_from(request)
        if identity is None:
            raise _Unauthorized()
        return identity

    class _Unauthorized(Exception):
        pass

    @app.exception_handler(_Unauthorized)
    async def unauthorized_handler(request, exc):
        return JSONResponse(status_code=401, content={
            "code": "unauthorized", "message": "missing or invalid token"})

    @app.get("/api/v1/system")
    def get_system(identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "check_status", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)
        view = outcome.header["result"]
        return SystemView(server=view["server"], endpoint=view["endpoint"],
                          generation=view["generation"], active=view["active"],
                          clients=view["clients"], settings=view["settings"])

    @app.get("/api/v1/jobs")
    def get_jobs(identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "list_jobs", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)
        return JobsResponse(jobs=outcome.header["result"])

    @app.get("/api/v1/jobs/{job_id}")
    def get_job(job_id: str, identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "list_jobs", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)
        for job in outcome.header["result"]:
            if job["job_id"] == job_id:
                return JobView(**job)
        return JSONResponse(status_code=404, content={
            "code": "not_found", "message": f"unknown job {job_id!r}"})

    @app.post("/api/v1/jobs")
    async def submit_job(file: UploadFile,
                         identity=Depends(require_identity)):
        payload = await file.read()
        outcome = service.dispatch(identity, "submit_job", {}, payload)
        return _outcome_response(outcome, SubmitResponse)

    @app.post("/api/v1/jobs/{job_id}/abort")
    def abort_job(job_id: str, identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "abort_job", {"job_id": job_id})
        return _outcome_response(outcome, AbortResponse)

    @app.get("/api/v1/clients")
    def get_clients(identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "list_clients", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)
        return ClientsResponse(clients=outcome.header["result"])

    @app.get("/api/v1/jobs/{job_id}/metrics")
    async def get_metrics(job_id: str, since: int = 0, wait_s: float = 0.0,
                          identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "check_status", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)
        if job_id not in server.job_store.job_ids():
            return JSONResponse(status_code=404, content={
                "code": "not_found", "message": f"unknown job {job_id!r}"})
        events = await asyncio.to_thread(server.job_metrics, job_id, since,
                                         min(wait_s, 30.0))
        return MetricsResponse(events=events, next=since + len(events))

    @app.get("/api/v1/jobs/{job_id}/metrics/stream")
    async def stream_metrics(job_id: str, since: int = 0,
                             identity=Depends(require_identity)):
        outcome = service.dispatch(identity, "check_status", {})
        if not outcome.header.get("ok"):
            return _outcome_response(outcome)

        async def gen():
            cursor = since
            idle = 0
            while idle < 120:
                events = await asyncio.to_thread(server.job_metrics, job_id,
                                                 cursor, 1.0)
                if not events:
                    idle += 1
                    continue
                idle = 0
                for event in events:
                    cursor = event["cursor"] + 1
                    yield (f"id: {event['cursor']}\n"
                           f"data: {json.dumps(event)}\n\n")

        return StreamingResponse(gen(), media_type="text/event-stream")

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="dashboard")
    return app


def serve_status_api(server, host: str, port: int, static_dir=None):
    """Run the status app under uvicorn in a daemon thread; returns it."""
    import threading

    import uvicorn

    app = create_status_app(server, static_dir=static_dir)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    uv_server = uvicorn.Server(config)
    thread = threading.Thread(target=uv_server.run, daemon=True,
                              name="status-api")
    thread.start()
    return uv_server
