"""Multi-label training: BCE loss, SGD with momentum, plateau learning-rate
schedule, and per-label best-checkpoint tracking."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import cardionet, metrics
from .autodiff import Parameter, Tensor
from .bundle import load_bundle_bytes, save_bundle_bytes
from .cardionet import CardioNet, ModelConfig
from .ecg import EcgRecording
from .synth import af_spec, generate_recording, sinus_spec

PROB_CLAMP = 1e-7
LR_FLOOR = 1e-6
IMPROVEMENT_DELTA = 1e-6

# Plateau patience from the production schedule is 5000 batches; desk-scale
# runs use 50 so the schedule is exercisable in tests.
PRODUCTION_PATIENCE_BATCHES = 5000


class TrainingError(ValueError):
    pass


class OptimizerError(RuntimeError):
    """Optimizer stepped without freshly populated gradients."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_factor: float = 0.1
    plateau_patience_batches: int = 50
    batch_size: int = 8
    max_batches: int = 500
    validation_every: int = 25
    seed: int = 0
    momentum: float = 0.9
    lr_floor: float = LR_FLOOR
    label_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (0.0 < self.lr_factor < 1.0):
            raise TrainingError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.plateau_patience_batches < 1:
            raise TrainingError("plateau_patience_batches must be >= 1")
        if self.batch_size < 1 or self.validation_every < 1:
            raise TrainingError("batch_size and validation_every must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")


def bce_multilabel_loss(probabilities: Tensor, targets, label_weights=None) -> Tensor:
    """Mean over labels of -(y log p + (1-y) log(1-p)), p clamped away from 0/1."""
    y = np.asarray(targets, dtype=np.float64)
    if probabilities.data.shape != y.shape:
        raise TrainingError(
            f"probabilities shape {probabilities.shape} != targets shape {y.shape}"
        )
    p = ad.clip(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_label = y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)
    if label_weights is not None:
        weights = np.asarray(label_weights, dtype=np.float64)
        if weights.shape != y.shape:
            raise TrainingError("label_weights must have one weight per label")
        per_label = per_label * weights
    return -ad.mean_all(per_label)


class SgdMomentum:
    """Momentum SGD: velocity <- momentum*velocity - lr*grad; value += velocity.

    Gradients are zeroed after each step; stepping without a fresh backward
    pass is a contract violation.
    """

    def __init__(self, params: list[Parameter], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        stale = [i for i, p in enumerate(self.params) if not p.grad_fresh]
        if stale:
            raise OptimizerError(
                f"step() before backward(): {len(stale)} parameters have no fresh gradient"
            )
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v -= lr * p.grad
            p.data += v
            p.zero_grad()


class PlateauScheduler:
    """Cut the learning rate by lr_factor when the validation metric has not
    improved for `patience_batches` worth of batches."""

    def __init__(self, initial_lr: float, patience_batches: int,
                 factor: float = 0.1, floor: float = LR_FLOOR,
                 min_delta: float = IMPROVEMENT_DELTA):
        self.lr = initial_lr
        self.patience_batches = patience_batches
        self.factor = factor
        self.floor = floor
        self.min_delta = min_delta
        self.best = -math.inf
        self.stagnant_batches = 0

    def update(self, metric: float, batches_since_last: int) -> float:
        """Feed one validation metric (higher is better); returns current lr."""
        if metric > self.best + self.min_delta:
            self.best = metric
            self.stagnant_batches = 0
        else:
            self.stagnant_batches += batches_since_last
            if self.stagnant_batches >= self.patience_batches:
                self.lr = max(self.lr * self.factor, self.floor)
                self.stagnant_batches = 0
        return self.lr


@dataclass(frozen=True)
class LabeledExample:
    """One preprocessed recording: segment stack plus its 0/1 target vector."""

    segments: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class Dataset:
    vocabulary: tuple[tuple[str, str], ...]
    examples: tuple[LabeledExample, ...]

    def __len__(self) -> int:
        return len(self.examples)

    def target_matrix(self) -> np.ndarray:
        return np.stack([ex.targets for ex in self.examples])


def prepare_dataset(config: ModelConfig, recordings: list[tuple[EcgRecording, np.ndarray]]) -> Dataset:
    """Run the serving preprocessing once per recording."""
    examples = []
    n_labels = len(config.labels)
    for rec, targets in recordings:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (n_labels,):
            raise TrainingError(
                f"target vector shape {targets.shape} does not match vocabulary size {n_labels}"
            )
        batch, _ = cardionet.preprocess(config, rec)
        examples.append(LabeledExample(segments=batch.segments, targets=targets))
    if not examples:
        raise TrainingError("dataset is empty")
    return Dataset(vocabulary=config.labels, examples=tuple(examples))


TOY_VOCABULARY = (
    ("NSR", "Normal sinus rhythm"),
    ("AF", "Atrial fibrillation"),
)


def synthetic_dataset(config: ModelConfig, count: int, seed: int,
                      duration_s: float = 16.0, source_rate_hz: float = 500.0) -> Dataset:
    """Balanced sinus / AF-like corpus; rhythm parameters vary per recording.

    AF examples carry the rapid irregular ventricular response (350-550 ms RR,
    high jitter, no P wave); sinus examples are slower, regular, with P waves.
    """
    rng = np.random.default_rng(seed)
    recordings = []
    for i in range(count):
        is_af = i % 2 == 1
        if is_af:
            spec = af_spec(
                mean_rr_ms=float(rng.uniform(350.0, 550.0)),
                rr_jitter=float(rng.uniform(0.22, 0.35)),
                qrs_amplitude_mv=float(rng.uniform(0.9, 1.3)),
            )
        else:
            spec = sinus_spec(
                mean_rr_ms=float(rng.uniform(630.0, 1000.0)),
                rr_jitter=float(rng.uniform(0.0, 0.05)),
                p_amplitude_mv=float(rng.uniform(0.15, 0.25)),
                qrs_amplitude_mv=float(rng.uniform(0.9, 1.3)),
            )
        rec, targets, _ = generate_recording(
            spec, duration_s=duration_s, rate_hz=source_rate_hz,
            seed=int(rng.integers(0, 2**31)), vocabulary=config.labels,
        )
        recordings.append((rec, targets))
    return prepare_dataset(config, recordings)


@dataclass
class Snapshot:
    auc: float
    batch: int
    bundle_bytes: bytes


@dataclass
class CheckpointLedger:
    """Best validation checkpoints: one per label, plus the macro-average best
    that serves as the final model."""

    vocabulary: tuple[tuple[str, str], ...]
    per_label: dict[str, Snapshot] = field(default_factory=dict)
    macro: Snapshot | None = None
    history: list[dict] = field(default_factory=list)

    def record(self, batch: int, per_label_aucs: dict[str, float], macro_auc: float,
               net: CardioNet, lr: float):
        entry = {"batch": batch, "macro_auc": macro_auc, "lr": lr,
                 "per_label_auc": dict(per_label_aucs)}
        self.history.append(entry)
        blob: bytes | None = None
        for code, auc in per_label_aucs.items():
            current = self.per_label.get(code)
            if current is None or auc > current.auc:
                blob = blob if blob is not None else save_bundle_bytes(net.to_bundle())
                self.per_label[code] = Snapshot(auc=auc, batch=batch, bundle_bytes=blob)
        if self.macro is None or macro_auc > self.macro.auc:
            blob = blob if blob is not None else save_bundle_bytes(net.to_bundle())
            self.macro = Snapshot(auc=macro_auc, batch=batch, bundle_bytes=blob)

    def best_auc(self, code: str) -> float:
        return self.per_label[code].auc

    def serving_net(self) -> CardioNet:
        """The macro-average-best snapshot, restored."""
        if self.macro is None:
            raise TrainingError("ledger holds no snapshots")
        return cardionet.from_bundle(load_bundle_bytes(self.macro.bundle_bytes))

    def write_run_dir(self, run_dir):
        """Persist snapshots plus a manifest of batch indices and AUCs."""
        path = Path(run_dir)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "vocabulary": [list(pair) for pair in self.vocabulary],
            "macro": None,
            "labels": {},
            "history": self.history,
        }
        if self.macro is not None:
            (path / "best_macro.bundle").write_bytes(self.macro.bundle_bytes)
            manifest["macro"] = {"auc": self.macro.auc, "batch": self.macro.batch,
                                 "file": "best_macro.bundle"}
        for code, snap in self.per_label.items():
            fname = f"best_{code}.bundle"
            (path / fname).write_bytes(snap.bundle_bytes)
            manifest["labels"][code] = {"auc": snap.auc, "batch": snap.batch, "file": fname}
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _evaluate(net: CardioNet, dataset: Dataset) -> tuple[dict[str, float], float]:
    with ad.no_grad():
        scores = np.stack([
            cardionet.forward_graph(net, ex.segments).data for ex in dataset.examples
        ])
    labels = dataset.target_matrix()
    by_index = metrics.per_label_auc(scores, labels)
    codes = [code for code, _ in dataset.vocabulary]
    per_label = {codes[i]: auc for i, auc in by_index.items()}
    macro = float(np.mean(list(per_label.values()))) if per_label else 0.5
    return per_label, macro


class _EpochSampler:
    """Deterministic shuffling: a fresh permutation of the training set each
    epoch, consumed batch_size indices at a time."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order: list[int] = []

    def next_batch(self) -> list[int]:
        while len(self.order) < self.batch_size:
            self.order.extend(self.rng.permutation(self.n).tolist())
        batch, self.order = self.order[: self.batch_size], self.order[self.batch_size:]
        return batch


def fit(net: CardioNet, train: Dataset, val: Dataset, tc: TrainConfig,
        run_dir=None) -> CheckpointLedger:
    """Forward / loss / backward / step loop with periodic validation,
    plateau scheduling, and per-label best-model tracking."""
    for ds, name in ((train, "train"), (val, "validation")):
        if ds.vocabulary != net.config.labels:
            raise TrainingError(f"{name} dataset vocabulary does not match the model's")
        if len(ds) == 0:
            raise TrainingError(f"{name} dataset is empty")

    rng = np.random.default_rng(tc.seed)
    sampler = _EpochSampler(len(train), tc.batch_size, rng)
    optimizer = SgdMomentum(net.parameters(), momentum=tc.momentum)
    scheduler = PlateauScheduler(tc.learning_rate, tc.plateau_patience_batches,
                                 factor=tc.lr_factor, floor=tc.lr_floor)
    ledger = CheckpointLedger(vocabulary=net.config.labels)

    per_label, macro = _evaluate(net, val)
    ledger.record(0, per_label, macro, net, scheduler.lr)
    scheduler.update(macro, 0)

    for batch_no in range(1, tc.max_batches + 1):
        indices = sampler.next_batch()
        total = None
        for idx in indices:
            ex = train.examples[idx]
            probs = cardionet.forward_graph(net, ex.segments)
            loss = bce_multilabel_loss(probs, ex.targets, tc.label_weights)
            total = loss if total is None else total + loss
        batch_loss = total * (1.0 / len(indices))
        ad.backward(batch_loss)
        optimizer.step(scheduler.lr)

        if batch_no % tc.validation_every == 0:
            per_label, macro = _evaluate(net, val)
            ledger.record(batch_no, per_label, macro, net, scheduler.lr)
            scheduler.update(macro, tc.validation_every)

    if run_dir is not None:
        ledger.write_run_dir(run_dir)
    return ledger
