"""Closed-loop stress harness: a fixed number of concurrent issuers, wall-clock
latency per request, nearest-rank percentiles and throughput."""

import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .ecg import WIRE_FIELD_BY_LEAD
from .synth import af_spec, generate_recording, generate_twelve_lead, sinus_spec

HISTOGRAM_BUCKET_MS = 50.0
DEFAULT_PAYLOAD_POOL = 32


class LoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class LoadPlan:
    url: str
    token: str
    total_requests: int
    concurrency: int
    payloads: Callable[[int], str]  # request index -> JSON body
    seed: int = 0
    request_timeout_s: float = 60.0
    duration_fallback_s: float | None = None

    def __post_init__(self):
        if self.total_requests < 1:
            raise LoadError("total_requests must be >= 1")
        if not (1 <= self.concurrency <= self.total_requests):
            raise LoadError("need 1 <= concurrency <= total_requests")


@dataclass(frozen=True)
class RequestRecord:
    index: int
    request_id: str
    start_ms: float  # offset from run start
    latency_ms: float
    status: str  # "ok" or an error code


@dataclass
class LoadReport:
    records: list[RequestRecord]
    wall_time_s: float
    complete: bool
    issued: int = 0
    successes: int = 0
    throughput_rps: float = 0.0
    p50_ms: float = 0.0
    p90_ms: float = 0.0
    p99_ms: float = 0.0
    error_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "issued": self.issued,
            "successes": self.successes,
            "wallTimeS": self.wall_time_s,
            "complete": self.complete,
            "throughputRps": self.throughput_rps,
            "p50Ms": self.p50_ms,
            "p90Ms": self.p90_ms,
            "p99Ms": self.p99_ms,
            "errorCounts": self.error_counts,
        }


def nearest_rank(sorted_values: list[float], percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not sorted_values:
        raise LoadError("no values to take a percentile of")
    if not (0 < percentile <= 100):
        raise LoadError(f"percentile must be in (0, 100], got {percentile}")
    rank = math.ceil(percentile / 100.0 * len(sorted_values))
    return sorted_values[rank - 1]


def summarize(records: list[RequestRecord], wall_time_s: float, complete: bool = True) -> LoadReport:
    """Aggregate raw records into the report statistics."""
    if not records:
        raise LoadError("cannot summarize an empty record list")
    latencies = sorted(r.latency_ms for r in records)
    successes = sum(1 for r in records if r.status == "ok")
    errors: dict[str, int] = {}
    for r in records:
        if r.status != "ok":
            errors[r.status] = errors.get(r.status, 0) + 1
    return LoadReport(
        records=list(records),
        wall_time_s=wall_time_s,
        complete=complete,
        issued=len(records),
        successes=successes,
        throughput_rps=successes / wall_time_s if wall_time_s > 0 else 0.0,
        p50_ms=nearest_rank(latencies, 50),
        p90_ms=nearest_rank(latencies, 90),
        p99_ms=nearest_rank(latencies, 99),
        error_counts=errors,
    )


def synthetic_payloads(seed: int, duration_s: float = 30.0, rate_hz: float = 250.0,
                       twelve_lead: bool = False,
                       pool_size: int = DEFAULT_PAYLOAD_POOL) -> Callable[[int], str]:
    """Deterministic pool of synthetic wire templates, cycled by request index.

    Bodies are rendered to JSON on every call: each issuer serializes its own
    request, as a real client would, so the render cost is part of the
    closed loop.
    """
    templates: list[dict] = []
    for i in range(pool_size):
        spec = sinus_spec() if i % 2 == 0 else af_spec()
        generate = generate_twelve_lead if twelve_lead else generate_recording
        rec, _, _ = generate(spec, duration_s=duration_s, rate_hz=rate_hz, seed=seed + i)
        payload = {"sampleRate": rec.sample_rate_hz, "adcGain": rec.adc_gain,
                   "baseline": rec.baseline}
        for lead, values in rec.leads.items():
            payload[WIRE_FIELD_BY_LEAD[lead]] = [round(float(v), 4) for v in values]
        templates.append(payload)
    return lambda index: json.dumps(templates[index % len(templates)])


def corpus_payloads(directory) -> Callable[[int], str]:
    """Wire bodies from *.json files in a directory, cycled in sorted order."""
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise LoadError(f"no *.json payloads in {directory}")
    bodies = [f.read_text() for f in files]
    return lambda index: bodies[index % len(bodies)]


def run(plan: LoadPlan) -> LoadReport:
    """Issue plan.total_requests with exactly plan.concurrency in flight."""
    lock = threading.Lock()
    next_index = 0
    records: list[RequestRecord] = []
    aborted = threading.Event()
    deadline = None
    start = time.perf_counter()
    if plan.duration_fallback_s is not None:
        deadline = start + plan.duration_fallback_s

    def take_index() -> int | None:
        nonlocal next_index
        with lock:
            if next_index >= plan.total_requests:
                return None
            if aborted.is_set():
                return None
            if deadline is not None and time.perf_counter() > deadline:
                return None
            index = next_index
            next_index += 1
            return index

    def issuer():
        session = requests.Session()
        headers = {"Authorization": f"Bearer {plan.token}",
                   "Content-Type": "application/json"}
        while True:
            index = take_index()
            if index is None:
                return
            body = plan.payloads(index)
            t0 = time.perf_counter()
            try:
                resp = session.post(plan.url, data=body, headers=headers,
                                    timeout=plan.request_timeout_s)
                latency_ms = (time.perf_counter() - t0) * 1000.0
                status, request_id = _classify(resp)
            except requests.exceptions.ConnectionError:
                aborted.set()
                return
            except requests.exceptions.RequestException:
                latency_ms = (time.perf_counter() - t0) * 1000.0
                status, request_id = "CONNECTION_ERROR", ""
            record = RequestRecord(index=index, request_id=request_id,
                                   start_ms=(t0 - start) * 1000.0,
                                   latency_ms=latency_ms, status=status)
            with lock:
                records.append(record)

    threads = [threading.Thread(target=issuer, name=f"loadgen-{i}")
               for i in range(plan.concurrency)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - start

    if not records:
        raise LoadError(f"no responses recorded; is the service at {plan.url} reachable?")
    complete = not aborted.is_set() and len(records) == plan.total_requests
    return summarize(records, wall, complete)


def _classify(resp) -> tuple[str, str]:
    try:
        body = resp.json()
    except ValueError:
        return f"HTTP_{resp.status_code}", ""
    request_id = body.get("requestId", "")
    if resp.status_code == 200 and body.get("status") == "ok":
        return "ok", request_id
    error = body.get("error") or {}
    return error.get("code", f"HTTP_{resp.status_code}"), request_id


def histogram_csv(records: list[RequestRecord], bucket_ms: float = HISTOGRAM_BUCKET_MS) -> str:
    """Latency histogram with fixed-width buckets."""
    if not records:
        raise LoadError("no records to bucket")
    counts: dict[int, int] = {}
    for r in records:
        bucket = int(r.latency_ms // bucket_ms)
        counts[bucket] = counts.get(bucket, 0) + 1
    lines = ["bucket_start_ms,bucket_end_ms,count"]
    for bucket in sorted(counts):
        lines.append(f"{bucket * bucket_ms:g},{(bucket + 1) * bucket_ms:g},{counts[bucket]}")
    return "\n".join(lines) + "\n"


def records_csv(records: list[RequestRecord]) -> str:
    # full-precision floats so report statistics recompute exactly from the export
    lines = ["request_id,start_ms,latency_ms,status"]
    for r in sorted(records, key=lambda r: r.index):
        lines.append(f"{r.request_id},{r.start_ms!r},{r.latency_ms!r},{r.status}")
    return "\n".join(lines) + "\n"


def parse_records_csv(text: str) -> list[RequestRecord]:
    """Reload an exported raw-record CSV (for recomputing report statistics)."""
    lines = [line for line in text.strip().split("\n") if line]
    if not lines or lines[0] != "request_id,start_ms,latency_ms,status":
        raise LoadError("not a loadgen records CSV")
    records = []
    for index, line in enumerate(lines[1:]):
        request_id, start_ms, latency_ms, status = line.split(",")
        records.append(RequestRecord(index=index, request_id=request_id,
                                     start_ms=float(start_ms), latency_ms=float(latency_ms),
                                     status=status))
    return records
