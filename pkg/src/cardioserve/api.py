"""JSON wire protocol over the serving engine.

POST /api/v1/analyze carries acquisition parameters plus one array per lead
(dataI .. dataV6, null when absent); responses report per-label probabilities,
rhythm measurements and timing.  Unknown request fields are rejected so lead
name typos cannot silently drop a channel.
"""

import asyncio
import json
import time
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, ValidationError

from .engine import (AnalysisOutcome, Busy, Engine, Failure, AcquisitionParams, Success,
                     Timeout, Unauthorized)
from .ecg import WIRE_FIELD_BY_LEAD, LeadId

WIRE_LEAD_FIELDS = {field: lead for lead, field in WIRE_FIELD_BY_LEAD.items()}

# Engine failure codes that describe a defective request rather than a
# server-side fault.
REQUEST_FAULT_CODES = {
    "INSUFFICIENT_LEADS",
    "INVALID_RECORDING",
    "INVALID_SIGNAL",
    "RECORDING_TOO_SHORT",
}


class WireError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class WireRequest(BaseModel):
    """The analyze POST body; field names are part of the wire contract."""

    model_config = ConfigDict(extra="forbid")

    sampleRate: float
    adcGain: float
    baseline: float = 0.0
    dataI: list[float] | None = None
    dataII: list[float] | None = None
    dataIII: list[float] | None = None
    dataAVR: list[float] | None = None
    dataAVL: list[float] | None = None
    dataAVF: list[float] | None = None
    dataV1: list[float] | None = None
    dataV2: list[float] | None = None
    dataV3: list[float] | None = None
    dataV4: list[float] | None = None
    dataV5: list[float] | None = None
    dataV6: list[float] | None = None

    def lead_map(self) -> dict[LeadId, np.ndarray]:
        leads = {}
        for field, lead in WIRE_LEAD_FIELDS.items():
            values = getattr(self, field)
            if values is not None:
                leads[lead] = np.asarray(values, dtype=np.float64)
        return leads


def parse_wire_request(payload) -> WireRequest:
    """Strict validation of the analyze body, mapped to wire error codes."""
    if not isinstance(payload, dict):
        raise WireError("MALFORMED_JSON", "request body must be a JSON object")
    try:
        req = WireRequest.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "body"
        kind = first["type"]
        if kind == "missing":
            raise WireError("MISSING_PARAM", f"missing required field {location!r}") from exc
        if kind == "extra_forbidden":
            raise WireError("UNKNOWN_FIELD", f"unknown field {location!r}") from exc
        raise WireError("INVALID_PARAM", f"field {location!r}: {first['msg']}") from exc

    if req.sampleRate <= 0 or req.adcGain <= 0:
        raise WireError("INVALID_PARAM", "sampleRate and adcGain must be positive")
    if req.dataI is None:
        raise WireError("INSUFFICIENT_LEADS", "dataI is required for every request")
    lengths = set()
    for field in WIRE_LEAD_FIELDS:
        values = getattr(req, field)
        if values is None:
            continue
        if len(values) == 0:
            raise WireError("INVALID_PARAM", f"{field} must not be empty")
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise WireError("INVALID_PARAM", f"{field} contains non-finite values")
        lengths.add(len(values))
    if len(lengths) > 1:
        raise WireError("UNEQUAL_LEAD_LENGTHS",
                        f"all lead arrays must have equal length, got {sorted(lengths)}")
    return req


def serialize_wire_request(req: WireRequest) -> dict:
    return req.model_dump()


def map_outcome(outcome: AnalysisOutcome, request_id: str, processing_ms: float) -> tuple[int, dict]:
    """Total mapping from engine outcomes to (http status, response body)."""
    base = {"requestId": request_id, "processingMs": processing_ms}
    if isinstance(outcome, Success):
        body = dict(base)
        body["status"] = "ok"
        body["model"] = outcome.model_kind
        body["predictions"] = [
            {"code": code, "name": name, "probability": prob}
            for (code, name), prob in zip(outcome.prediction.labels,
                                          outcome.prediction.probabilities)
        ]
        if outcome.measurements is not None:
            body["measurements"] = {
                "heartRateBpm": outcome.measurements.heart_rate_bpm,
                "rrMeanMs": outcome.measurements.rr_mean_ms,
                "rrStdMs": outcome.measurements.rr_std_ms,
            }
        else:
            body["measurements"] = None
        return 200, body
    if isinstance(outcome, Unauthorized):
        return 401, _error_body(base, "UNAUTHORIZED", "invalid or missing token")
    if isinstance(outcome, Busy):
        return 429, _error_body(base, "BUSY", "task queue is full, try again later")
    if isinstance(outcome, Timeout):
        return 504, _error_body(base, "TIMEOUT", "analysis did not finish in time")
    if isinstance(outcome, Failure):
        status = 400 if outcome.code in REQUEST_FAULT_CODES else 500
        return status, _error_body(base, outcome.code, outcome.message)
    raise TypeError(f"unmapped outcome type {type(outcome).__name__}")


def _error_body(base: dict, code: str, message: str) -> dict:
    body = dict(base)
    body["status"] = "error"
    body["error"] = {"code": code, "message": message}
    return body


def _bearer_token(request: Request) -> str | None:
    header = request.headers.get("authorization")
    if header is None:
        return None
    scheme, _, token = header.partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        return None
    return token.strip()


def create_app(engine: Engine, console_dir=None) -> FastAPI:
    app = FastAPI(title="cardioserve", docs_url=None, redoc_url=None, openapi_url=None)

    @app.post("/api/v1/analyze")
    async def analyze(request: Request):
        started = time.perf_counter()
        request_id = uuid.uuid4().hex

        def reply(status: int, body: dict) -> JSONResponse:
            body["processingMs"] = (time.perf_counter() - started) * 1000.0
            return JSONResponse(status_code=status, content=body)

        token = _bearer_token(request)
        if token is None:
            status, body = map_outcome(Unauthorized(), request_id, 0.0)
            return reply(status, body)

        try:
            payload = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return reply(400, _error_body({"requestId": request_id, "processingMs": 0.0},
                                          "MALFORMED_JSON", "request body is not valid JSON"))
        try:
            wire = parse_wire_request(payload)
        except WireError as exc:
            return reply(400, _error_body({"requestId": request_id, "processingMs": 0.0},
                                          exc.code, str(exc)))

        params = AcquisitionParams(sample_rate_hz=wire.sampleRate, adc_gain=wire.adcGain,
                                   baseline=wire.baseline)
        submitted = engine.submit(token, params, wire.lead_map())
        if isinstance(submitted, (Unauthorized, Busy)):
            status, body = map_outcome(submitted, request_id, 0.0)
            return reply(status, body)

        # bridge the worker-thread outcome straight onto the event loop
        loop = asyncio.get_running_loop()
        future: asyncio.Future = loop.create_future()

        def deliver(outcome):
            loop.call_soon_threadsafe(
                lambda: future.set_result(outcome) if not future.done() else None)

        submitted.add_callback(deliver)
        wait_s = engine.config.request_timeout_s + 1.0
        try:
            outcome = await asyncio.wait_for(future, wait_s)
        except asyncio.TimeoutError:
            outcome = Timeout(waited_ms=wait_s * 1000.0)
        status, body = map_outcome(outcome, request_id, 0.0)
        return reply(status, body)

    @app.get("/api/v1/health")
    def health():
        return {"status": "ok", "queueDepth": engine.queue_depth, "workers": engine.worker_count}

    @app.get("/api/v1/models")
    def models():
        listing = {}
        for kind, net in engine.models.items():
            listing[kind.value] = {
                "labels": [{"code": code, "name": name} for code, name in net.config.labels]
            }
        return {"models": listing}

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app
