"""Calibration measurement and post-hoc temperature scaling.

ECE bins the top-1 confidence; classwise ECE bins every class's predicted
probability separately and averages the class errors. Both use equal-width
bins where the first bin is the closed interval [0, 1/N] and bin n is
((n-1)/N, n/N], so a value exactly on an edge lands in the lower bin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class BinningSpec:
    num_bins: int = 15

    def __post_init__(self):
        if self.num_bins < 1:
            raise ShapeError("num_bins must be >= 1")

    @property
    def upper_edges(self) -> np.ndarray:
        # Interior edges only; searchsorted(side="left") then maps a value
        # exactly equal to n/N to bin n-1.
        return np.arange(1, self.num_bins) / self.num_bins

    def assign(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.upper_edges, values, side="left")


@dataclass
class CalibrationReport:
    accuracy: float
    cross_entropy: float
    ece: float
    cwece: float
    per_bin: list = field(default_factory=list)  # (bin, count, mean confidence, accuracy)
    per_class_bins: list = field(default_factory=list)  # (class, bin, count, mean predicted, actual)
    fitted_temperature: float | None = None
    subset_accuracy: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    validation_nll_before: float
    validation_nll_after: float


def _check_predictions(predictions: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2:
        raise ShapeError(f"predictions must be 2-D, got shape {p.shape}")
    if p.shape[0] == 0:
        raise ShapeError("empty prediction set")
    if y.shape != (p.shape[0],):
        raise ShapeError("labels length must match prediction rows")
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite predictions")
    return p, y


def ece(predictions: np.ndarray, labels: np.ndarray, bins: BinningSpec = BinningSpec()) -> float:
    """Binned gap between top-1 confidence and accuracy, weighted by bin mass."""
    p, y = _check_predictions(predictions, labels)
    confidence = p.max(axis=1)
    predicted = p.argmax(axis=1)  # argmax takes the lowest index on ties
    correct = (predicted == y).astype(np.float64)
    idx = bins.assign(confidence)
    total = 0.0
    n = p.shape[0]
    for b in range(bins.num_bins):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        total += (cnt / n) * abs(correct[mask].mean() - confidence[mask].mean())
    return total


def cwece(predictions: np.ndarray, labels: np.ndarray, bins: BinningSpec = BinningSpec()) -> float:
    """Classwise calibration error, averaged over classes.

    For class j, instances are binned by the predicted probability for j;
    each bin contributes the gap between the class-j fraction and the mean
    predicted probability, weighted by bin mass.
    """
    p, y = _check_predictions(predictions, labels)
    n, k = p.shape
    total = 0.0
    for j in range(k):
        pj = p[:, j]
        is_j = (y == j).astype(np.float64)
        idx = bins.assign(pj)
        for b in range(bins.num_bins):
            mask = idx == b
            cnt = int(mask.sum())
            if cnt == 0:
                continue
            total += (cnt / n) * abs(is_j[mask].mean() - pj[mask].mean())
    return total / k


def probs_to_logits(probs: np.ndarray) -> np.ndarray:
    """Recover logits up to the additive constant temperature scaling ignores."""
    p = np.asarray(probs, dtype=np.float64)
    return np.log(np.clip(p, PROB_FLOOR, None))


def scale_probs(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Re-softmax stored probabilities at the given temperature."""
    z = probs_to_logits(probs) / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def nll(probs: np.ndarray, labels: np.ndarray) -> float:
    p, y = _check_predictions(probs, labels)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], PROB_FLOOR, None))))


def fit_temperature(
    probs_or_logits: np.ndarray,
    labels: np.ndarray,
    log_t_bounds: tuple[float, float] = (math.log(0.05), math.log(20.0)),
    tol: float = 1e-4,
    from_logits: bool = False,
) -> TemperatureFit:
    """Golden-section search for the temperature minimizing validation NLL.

    The search runs on log T over a fixed bracket; T=1 is always a
    candidate, so the fitted NLL never exceeds the unscaled one. Argmax
    predictions are unchanged by construction.
    """
    arr = np.asarray(probs_or_logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    logits = arr if from_logits else probs_to_logits(arr)

    rows = np.arange(len(y))

    def nll_at(log_t: float) -> float:
        z = logits / math.exp(log_t)
        z = z - z.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        val = -log_probs[rows, y].mean()
        return float(val) if np.isfinite(val) else math.inf

    lo, hi = log_t_bounds
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = nll_at(c), nll_at(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = nll_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = nll_at(d)
    log_t = (a + b) / 2.0
    before = nll_at(0.0)
    after = nll_at(log_t)
    if not math.isfinite(before):
        raise NumericError("validation NLL is non-finite at T=1")
    if after >= before:  # keep the identity temperature when search gains nothing
        log_t, after = 0.0, before
    return TemperatureFit(
        temperature=math.exp(log_t),
        validation_nll_before=before,
        validation_nll_after=after,
    )


def evaluate(
    predictions: np.ndarray,
    labels: np.ndarray,
    bins: BinningSpec = BinningSpec(),
    subset_tags: list[str] | None = None,
    fitted_temperature: float | None = None,
) -> CalibrationReport:
    """Aggregate accuracy, cross-entropy and both calibration errors."""
    p, y = _check_predictions(predictions, labels)
    n, k = p.shape
    predicted = p.argmax(axis=1)
    correct = predicted == y
    accuracy = float(correct.mean())
    cross_entropy = nll(p, y)

    confidence = p.max(axis=1)
    idx = bins.assign(confidence)
    per_bin = []
    for b in range(bins.num_bins):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt:
            per_bin.append((b, cnt, float(confidence[mask].mean()), float(correct[mask].mean())))
        else:
            per_bin.append((b, 0, 0.0, 0.0))

    per_class_bins = []
    for j in range(k):
        pj = p[:, j]
        is_j = (y == j).astype(np.float64)
        cidx = bins.assign(pj)
        for b in range(bins.num_bins):
            mask = cidx == b
            cnt = int(mask.sum())
            if cnt:
                per_class_bins.append((j, b, cnt, float(pj[mask].mean()), float(is_j[mask].mean())))

    subset_accuracy = {}
    if subset_tags is not None:
        if len(subset_tags) != n:
            raise ShapeError("subset tags length must match prediction rows")
        tags = np.asarray(subset_tags)
        for tag in dict.fromkeys(subset_tags):  # preserve first-seen order
            mask = tags == tag
            subset_accuracy[str(tag)] = float(correct[mask].mean())

    return CalibrationReport(
        accuracy=accuracy,
        cross_entropy=cross_entropy,
        ece=ece(p, y, bins),
        cwece=cwece(p, y, bins),
        per_bin=per_bin,
        per_class_bins=per_class_bins,
        fitted_temperature=fitted_temperature,
        subset_accuracy=subset_accuracy,
    )


def prediction_histograms(predictions: np.ndarray, num_bins: int = 50) -> np.ndarray:
    """Histogram the sorted (descending) probabilities per rank position.

    Returns an array of shape (K, num_bins) where row r counts how often the
    rank-r probability falls into each equal-width bin over [0, 1].
    """
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"predictions must be 2-D, got shape {p.shape}")
    ranked = np.sort(p, axis=1)[:, ::-1]
    k = p.shape[1]
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    out = np.empty((k, num_bins), dtype=np.int64)
    for r in range(k):
        out[r], _ = np.histogram(ranked[:, r], bins=edges)
    return out
