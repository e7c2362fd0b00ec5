"""Request lifecycle: token authorization, bounded FIFO task queue, worker
pool, preprocessing + inference, one retry for transient faults, timeouts."""

import hmac
import logging
import os
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cardionet, dsp
from .cardionet import AnalysisResult, CardioNet, Prediction, aggregate_chunks, predict
from .dsp import RrMeasurements
from .ecg import (DomainError, EcgRecording, InsufficientLeads, LeadConfiguration, LeadId,
                  complete_leads, to_physical)

logger = logging.getLogger("cardioserve.engine")

CHUNK_SECONDS = 30.0
MIN_CHUNK_SECONDS = 2.0


class ValidationFailure(Exception):
    """Non-retryable request defect (bad leads, bad parameters)."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class TransientProcessingError(Exception):
    """Recoverable fault: the attempt may be retried."""


# -- outcomes ----------------------------------------------------------------


@dataclass(frozen=True)
class Success:
    prediction: Prediction
    measurements: RrMeasurements | None
    model_kind: str
    attempts: int
    duration_ms: float


@dataclass(frozen=True)
class Failure:
    code: str
    message: str
    attempts: int


@dataclass(frozen=True)
class Timeout:
    waited_ms: float


@dataclass(frozen=True)
class Unauthorized:
    pass


@dataclass(frozen=True)
class Busy:
    pass


AnalysisOutcome = Success | Failure | Timeout | Unauthorized | Busy


@dataclass(frozen=True)
class ProcessResult:
    """What a task processor computes; the engine wraps it into a Success."""

    prediction: Prediction
    measurements: RrMeasurements | None
    model_kind: str


@dataclass(frozen=True)
class AcquisitionParams:
    sample_rate_hz: float
    adc_gain: float
    baseline: float = 0.0


class TaskHandle:
    """One-shot outcome slot; wait on it or register a completion callback."""

    def __init__(self, task_id: str):
        self.task_id = task_id
        self._event = threading.Event()
        self._outcome: AnalysisOutcome | None = None
        self._lock = threading.Lock()
        self._callbacks: list[Callable[[AnalysisOutcome], None]] = []

    def resolve(self, outcome: AnalysisOutcome) -> bool:
        """Deliver the outcome; only the first delivery wins."""
        with self._lock:
            if self._event.is_set():
                return False
            self._outcome = outcome
            self._event.set()
            callbacks, self._callbacks = self._callbacks, []
        for callback in callbacks:
            callback(outcome)
        return True

    def wait(self, timeout_s: float | None = None) -> AnalysisOutcome | None:
        if not self._event.wait(timeout_s):
            return None
        return self._outcome

    def add_callback(self, callback: Callable[[AnalysisOutcome], None]):
        """Run callback with the outcome, immediately if already resolved.
        Callbacks fire on the resolving thread."""
        with self._lock:
            if not self._event.is_set():
                self._callbacks.append(callback)
                return
            outcome = self._outcome
        callback(outcome)


@dataclass
class AnalysisTask:
    task_id: str
    token: str
    params: AcquisitionParams
    data: dict[LeadId, np.ndarray]
    enqueue_time: float
    attempt: int = 1
    handle: TaskHandle | None = None

    def __post_init__(self):
        if self.handle is None:
            self.handle = TaskHandle(self.task_id)


class TaskQueue:
    """Bounded FIFO shared by workers; non-blocking rejection when full.

    Retries re-enter at the tail, preserving strict arrival order for
    everything already queued.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[AnalysisTask] = deque()
        self._cond = threading.Condition()
        self._closed = False

    def put(self, task: AnalysisTask) -> bool:
        with self._cond:
            if self._closed or len(self._items) >= self.capacity:
                return False
            self._items.append(task)
            self._cond.notify()
            return True

    def get(self) -> AnalysisTask | None:
        """Block for the next task; None once closed and drained."""
        with self._cond:
            while True:
                if self._items:
                    return self._items.popleft()
                if self._closed:
                    return None
                self._cond.wait()

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


def authorize(token: str, registry: frozenset[str]) -> bool:
    """Membership test via constant-time comparison against each candidate."""
    token_bytes = token.encode("utf-8")
    accepted = False
    for candidate in registry:
        if hmac.compare_digest(token_bytes, candidate.encode("utf-8")):
            accepted = True
    return accepted


def load_token_file(path) -> frozenset[str]:
    """One opaque token per line; blank lines ignored."""
    tokens = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            token = line.strip()
            if token:
                tokens.add(token)
    return frozenset(tokens)


def chunk_recording(rec: EcgRecording, chunk_seconds: float = CHUNK_SECONDS) -> list[EcgRecording]:
    """Cut a long recording into consecutive chunks of at most chunk_seconds.

    A final fragment shorter than 2 s is merged into the chunk before it.
    """
    if rec.duration_s < MIN_CHUNK_SECONDS:
        raise ValidationFailure("RECORDING_TOO_SHORT",
                                f"recording is {rec.duration_s:.2f} s, need >= {MIN_CHUNK_SECONDS} s")
    window = int(round(chunk_seconds * rec.sample_rate_hz))
    n = rec.num_samples
    if n <= window:
        return [rec]
    starts = list(range(0, n, window))
    min_tail = int(MIN_CHUNK_SECONDS * rec.sample_rate_hz)
    if n - starts[-1] < min_tail:
        starts.pop()  # merge the short tail into the final full chunk
    chunks = []
    for idx, start in enumerate(starts):
        end = starts[idx + 1] if idx + 1 < len(starts) else n
        leads = {lead: values[start:end] for lead, values in rec.leads.items()}
        chunks.append(EcgRecording(sample_rate_hz=rec.sample_rate_hz, adc_gain=rec.adc_gain,
                                   baseline=rec.baseline, leads=leads))
    return chunks


@dataclass(frozen=True)
class EngineConfig:
    tokens: frozenset[str]
    worker_count: int = field(default_factory=lambda: os.cpu_count() or 1)
    request_timeout_s: float = 30.0
    max_attempts: int = 2
    queue_capacity: int = 1024
    chunk_seconds: float = CHUNK_SECONDS

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.request_timeout_s <= 0:
            raise ValueError("request_timeout must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class EngineStats:
    """Thread-safe gauges for health reporting and backpressure tests."""

    def __init__(self):
        self._lock = threading.Lock()
        self.submitted = 0
        self.completed = 0
        self.rejected_busy = 0
        self.rejected_unauthorized = 0
        self.inflight = 0
        self.max_inflight = 0

    def on_submit(self):
        with self._lock:
            self.submitted += 1
            self.inflight += 1
            self.max_inflight = max(self.max_inflight, self.inflight)

    def on_complete(self):
        with self._lock:
            self.completed += 1
            self.inflight -= 1

    def on_busy(self):
        with self._lock:
            self.rejected_busy += 1

    def on_unauthorized(self):
        with self._lock:
            self.rejected_unauthorized += 1


class Engine:
    """Worker pool draining the shared FIFO queue over immutable model bundles.

    `processor` computes one task's ProcessResult; the default runs the full
    preprocessing + inference pipeline.  Tests may substitute it to inject
    faults or synthetic workloads.
    """

    def __init__(self, config: EngineConfig,
                 models: dict[LeadConfiguration, CardioNet] | None = None,
                 processor: Callable[[AnalysisTask], ProcessResult] | None = None):
        self.config = config
        self.models = dict(models or {})
        self.processor = processor if processor is not None else self._analyze
        self.queue = TaskQueue(config.queue_capacity)
        self.stats = EngineStats()
        self._workers: list[threading.Thread] = []
        self._started = False
        self._closed = False

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        if self._started:
            return self
        self._started = True
        for i in range(self.config.worker_count):
            t = threading.Thread(target=self._worker_loop, name=f"ecg-worker-{i}", daemon=True)
            t.start()
            self._workers.append(t)
        return self

    def shutdown(self):
        """Stop accepting work, drain queued tasks, join the workers."""
        self._closed = True
        self.queue.close()
        for t in self._workers:
            t.join()
        self._workers.clear()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    # -- submission ----------------------------------------------------------

    def submit(self, token: str, params: AcquisitionParams,
               data: dict[LeadId, np.ndarray]) -> TaskHandle | Unauthorized | Busy:
        """Authorize and enqueue; unauthorized requests are never enqueued."""
        if not authorize(token, self.config.tokens):
            self.stats.on_unauthorized()
            return Unauthorized()
        task = AnalysisTask(task_id=uuid.uuid4().hex, token=token, params=params,
                            data=data, enqueue_time=time.monotonic())
        if self._closed or not self.queue.put(task):
            self.stats.on_busy()
            return Busy()
        self.stats.on_submit()
        return task.handle

    @property
    def queue_depth(self) -> int:
        return len(self.queue)

    @property
    def worker_count(self) -> int:
        return self.config.worker_count

    # -- processing ----------------------------------------------------------

    def _worker_loop(self):
        while True:
            task = self.queue.get()
            if task is None:
                return
            try:
                self._process_one(task)
            except Exception:  # contain anything, keep the worker alive
                logger.exception("worker error on task %s", task.task_id)
                self._finish(task, Failure(code="INTERNAL", message="worker error",
                                           attempts=task.attempt))

    def _process_one(self, task: AnalysisTask):
        start = time.monotonic()
        waited_ms = (start - task.enqueue_time) * 1000.0
        if start - task.enqueue_time > self.config.request_timeout_s:
            self._finish(task, Timeout(waited_ms=waited_ms))
            return
        try:
            result = self.processor(task)
        except ValidationFailure as exc:
            self._finish(task, Failure(code=exc.code, message=str(exc), attempts=task.attempt))
        except Exception as exc:
            # Transient per the retry policy: one more round through the queue.
            if task.attempt < self.config.max_attempts:
                task.attempt += 1
                if self.queue.put(task):
                    logger.info("task=%s retrying attempt=%d after %s",
                                task.task_id, task.attempt, type(exc).__name__)
                    return
                self._finish(task, Failure(code="RETRY_REJECTED",
                                           message="queue unavailable for retry",
                                           attempts=task.attempt))
            else:
                self._finish(task, Failure(code="PROCESSING_ERROR", message=str(exc),
                                           attempts=task.attempt))
        else:
            duration_ms = (time.monotonic() - task.enqueue_time) * 1000.0
            self._finish(task, Success(prediction=result.prediction,
                                       measurements=result.measurements,
                                       model_kind=result.model_kind,
                                       attempts=task.attempt,
                                       duration_ms=duration_ms))

    def _finish(self, task: AnalysisTask, outcome: AnalysisOutcome):
        if task.handle.resolve(outcome):
            self.stats.on_complete()
            kind = type(outcome).__name__.lower()
            route = getattr(outcome, "model_kind", "-")
            duration_ms = (time.monotonic() - task.enqueue_time) * 1000.0
            logger.info("task=%s route=%s attempts=%d duration_ms=%.1f outcome=%s",
                        task.task_id, route, task.attempt, duration_ms, kind)

    # -- the default processor: route, preprocess, infer ----------------------

    def _route(self, rec: EcgRecording) -> tuple[CardioNet, EcgRecording, LeadConfiguration]:
        present = set(rec.leads)
        if present == {LeadId.I}:
            kind = LeadConfiguration.SINGLE_LEAD
        else:
            physical = to_physical(rec)
            try:
                completed = complete_leads(physical)
            except InsufficientLeads as exc:
                raise ValidationFailure("INSUFFICIENT_LEADS", str(exc)) from exc
            kind = LeadConfiguration.TWELVE_LEAD
            leads = {lead: values * rec.adc_gain + rec.baseline
                     for lead, values in completed.channels}
            rec = EcgRecording(sample_rate_hz=rec.sample_rate_hz, adc_gain=rec.adc_gain,
                               baseline=rec.baseline, leads=leads)
        net = self.models.get(kind)
        if net is None:
            raise ValidationFailure("MODEL_UNAVAILABLE", f"no {kind.value} model is loaded")
        return net, rec, kind

    def _analyze(self, task: AnalysisTask) -> ProcessResult:
        try:
            rec = EcgRecording(sample_rate_hz=task.params.sample_rate_hz,
                               adc_gain=task.params.adc_gain,
                               baseline=task.params.baseline,
                               leads=task.data)
        except DomainError as exc:
            raise ValidationFailure("INVALID_RECORDING", str(exc)) from exc

        net, rec, kind = self._route(rec)
        try:
            chunks = chunk_recording(rec, self.config.chunk_seconds)
            if len(chunks) == 1:
                result: AnalysisResult = predict(net, rec)
                prediction, measurements = result.prediction, result.measurements
            else:
                prediction = aggregate_chunks([predict(net, c).prediction for c in chunks])
                _, filtered = cardionet.preprocess(net.config, rec)
                measurements = dsp.measure_rhythm(filtered)
        except ValidationFailure:
            raise
        except DomainError as exc:
            raise ValidationFailure("INVALID_SIGNAL", str(exc)) from exc
        return ProcessResult(prediction=prediction, measurements=measurements,
                             model_kind=kind.value)
