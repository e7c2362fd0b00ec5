"""ROC curves and ROC-AUC scores for per-label evaluation."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class MetricError(ValueError):
    pass


class DegenerateLabels(MetricError):
    """All labels identical: the ranking metric is undefined."""


@dataclass(frozen=True)
class RocCurve:
    """Operating points (false_positive_rate, true_positive_rate), threshold
    swept from +inf down; starts at (0,0) and ends at (1,1)."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) < 2 or self.points[0] != (0.0, 0.0) or self.points[-1] != (1.0, 1.0):
            raise MetricError("ROC curve must run from (0,0) to (1,1)")


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1 or scores.shape != labels.shape:
        raise MetricError("scores and labels must be equal-length 1-D sequences")
    if scores.shape[0] < 2:
        raise MetricError("need at least 2 scored examples")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    if labels.min() == labels.max():
        raise DegenerateLabels("labels are all identical; ROC is undefined")
    return scores, labels


def _count_steps(scores: np.ndarray, labels: np.ndarray) -> tuple[list[tuple[int, int]], int, int]:
    """Cumulative (false positives, true positives) after each distinct-score
    threshold step, descending; tied scores share one step."""
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    steps = [(0, 0)]
    tp = fp = 0
    i = 0
    n = len(sorted_scores)
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        group_pos = int(sorted_labels[i:j].sum())
        tp += group_pos
        fp += (j - i) - group_pos
        steps.append((fp, tp))
        i = j
    return steps, n_neg, n_pos


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores descending; ties share one step."""
    scores, labels = _validate(scores, labels)
    steps, n_neg, n_pos = _count_steps(scores, labels)
    return RocCurve(points=tuple((fp / n_neg, tp / n_pos) for fp, tp in steps))


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    Equal to the probability that a random positive outscores a random
    negative, with half credit for ties (the Mann-Whitney identity).  The
    area is accumulated in exact rational arithmetic and rounded to float
    once, so monotone-transform invariance and label-flip symmetry hold
    exactly.
    """
    scores, labels = _validate(scores, labels)
    steps, n_neg, n_pos = _count_steps(scores, labels)
    area = Fraction(0)
    for (fp0, tp0), (fp1, tp1) in zip(steps, steps[1:]):
        area += Fraction(fp1 - fp0, n_neg) * (Fraction(tp0, n_pos) + Fraction(tp1, n_pos))
    return float(area / 2)


def macro_auc(score_matrix, label_matrix) -> float:
    """Mean AUC over labels that have both classes present in label_matrix.

    score_matrix and label_matrix are (examples, labels).  Labels with a
    degenerate column are skipped; if every label is degenerate, returns 0.5.
    """
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise MetricError("score and label matrices must have identical (examples, labels) shape")
    aucs = []
    for col in range(scores.shape[1]):
        try:
            aucs.append(roc_auc(scores[:, col], labels[:, col]))
        except DegenerateLabels:
            continue
    return float(np.mean(aucs)) if aucs else 0.5


def per_label_auc(score_matrix, label_matrix) -> dict[int, float]:
    """AUC per label column index, skipping degenerate columns."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    out: dict[int, float] = {}
    for col in range(scores.shape[1]):
        try:
            out[col] = roc_auc(scores[:, col], labels[:, col])
        except DegenerateLabels:
            continue
    return out


def curve_csv(curve: RocCurve) -> str:
    """Curve points as CSV for external plotting."""
    lines = ["false_positive_rate,true_positive_rate"]
    for x, y in curve.points:
        lines.append(f"{x!r},{y!r}")
    return "\n".join(lines) + "\n"
