"""Training-target construction: hard labels, uniform smoothing, and the
teacher-guided instance-based variants.

All functions return an (N, K) float64 matrix whose rows are probability
distributions. Uniform smoothing moves a fixed fraction eps of mass from the
true class to all classes evenly; the instance-based variants either vary
eps per instance from a curve over the teacher's true-class probability
(ils1), redistribute a fixed eps over wrong classes in proportion to the
teacher's wrong-class probabilities (ils2), or do both (ils).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

QUADRATIC, SINUSOIDAL = "quadratic", "sinusoidal"

#: Teacher probability above which ils2 treats the teacher as saturated and
#: falls back to spreading the smoothing mass uniformly over wrong classes.
SATURATION = 1.0 - 1e-9

STRATEGIES = ("none", "ls", "ls_fixed", "ils1", "ils2", "ils", "cls", "bs_soft", "beta")


@dataclass(frozen=True)
class CurveParams:
    """Smoothing-factor curve over the teacher's true-class probability.

    quadratic:  eps(p) = min(cap, scale * (p - center)^2)
    sinusoidal: eps(p) = min(cap, 0.1 * (sin(scale * (p - center)) + 1))
    """

    family: str = QUADRATIC
    center: float = 0.8
    scale: float = 2.0
    cap: float = 0.2

    def __post_init__(self):
        if self.family not in (QUADRATIC, SINUSOIDAL):
            raise ConfigError(f"unknown curve family {self.family!r}")
        if not 0.0 < self.cap < 0.5:
            raise ConfigError(f"cap must be in (0, 0.5), got {self.cap}")


@dataclass(frozen=True)
class TeacherPredictions:
    """Teacher probability matrix plus the temperature used to produce it."""

    probs: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2:
            raise ShapeError("teacher probabilities must be 2-D")
        if np.abs(p.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
            raise ShapeError("teacher probability rows must sum to 1")


def validate_epsilon(eps: float) -> float:
    if not 0.0 <= eps < 0.5:
        raise ConfigError(f"smoothing factor must be in [0, 0.5), got {eps}")
    return float(eps)


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ShapeError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ConfigError(f"labels must lie in [0, {k})")
    return y


def hard_targets(labels: np.ndarray, k: int) -> np.ndarray:
    y = _check_labels(labels, k)
    out = np.zeros((y.size, k), dtype=np.float64)
    out[np.arange(y.size), y] = 1.0
    return out


def standard_ls(labels: np.ndarray, k: int, eps: float) -> np.ndarray:
    """True class gets 1 - eps + eps/K, every other class eps/K."""
    eps = validate_epsilon(eps)
    return hard_targets(labels, k) * (1.0 - eps) + eps / k


def _per_instance_ls(labels: np.ndarray, k: int, eps: np.ndarray) -> np.ndarray:
    y = _check_labels(labels, k)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (y.size,):
        raise ShapeError("per-instance eps must align with labels")
    return hard_targets(y, k) * (1.0 - eps[:, None]) + eps[:, None] / k


def ils1_epsilon(p_true, params: CurveParams):
    """Evaluate the smoothing-factor curve; accepts scalars or arrays."""
    p = np.asarray(p_true, dtype=np.float64)
    if params.family == QUADRATIC:
        raw = params.scale * (p - params.center) ** 2
    else:
        raw = 0.1 * (np.sin(params.scale * (p - params.center)) + 1.0)
    out = np.minimum(params.cap, np.maximum(raw, 0.0))
    return float(out) if np.isscalar(p_true) else out


def _teacher_true_probs(teacher: TeacherPredictions, labels: np.ndarray) -> np.ndarray:
    if teacher.probs.shape[0] != len(labels):
        raise ShapeError("teacher rows must align with labels")
    return teacher.probs[np.arange(len(labels)), labels]


def ils1_targets(labels: np.ndarray, k: int, teacher: TeacherPredictions, params: CurveParams) -> np.ndarray:
    """Uniform smoothing with a per-instance factor taken from the curve."""
    y = _check_labels(labels, k)
    eps = ils1_epsilon(_teacher_true_probs(teacher, y), params)
    return _per_instance_ls(y, k, eps)


def _teacher_proportional(labels: np.ndarray, k: int, teacher: TeacherPredictions, eps: np.ndarray) -> np.ndarray:
    """Distribute per-instance eps over wrong classes like the teacher does."""
    y = _check_labels(labels, k)
    n = y.size
    rows = np.arange(n)
    p = teacher.probs
    if p.shape != (n, k):
        raise ShapeError("teacher matrix must be (N, K) aligned with labels")
    p_true = p[rows, y]
    out = np.empty((n, k), dtype=np.float64)
    saturated = p_true >= SATURATION
    if saturated.any():
        log.warning(
            "teacher saturated (p_true >= 1 - 1e-9) on %d/%d instances; "
            "spreading smoothing mass uniformly there",
            int(saturated.sum()),
            n,
        )
    safe = ~saturated
    denom = 1.0 - p_true[safe]
    out[safe] = p[safe] * (eps[safe] / denom)[:, None]
    out[saturated] = (eps[saturated] / (k - 1))[:, None]
    out[rows, y] = 1.0 - eps
    return out


def ils2_targets(labels: np.ndarray, k: int, teacher: TeacherPredictions, eps: float) -> np.ndarray:
    """Fixed-factor smoothing whose wrong-class split follows the teacher.

    Wrong class j receives eps * p_teacher[j] / (1 - p_teacher[true]); the
    true class keeps 1 - eps, so wrong-class ratios equal the teacher's.
    """
    eps = validate_epsilon(eps)
    y = _check_labels(labels, k)
    return _teacher_proportional(y, k, teacher, np.full(y.size, eps))


def ils_targets(labels: np.ndarray, k: int, teacher: TeacherPredictions, params: CurveParams) -> np.ndarray:
    """Curve-valued per-instance factor distributed teacher-proportionally."""
    y = _check_labels(labels, k)
    eps = ils1_epsilon(_teacher_true_probs(teacher, y), params)
    return _teacher_proportional(y, k, teacher, eps)


def cls_targets(train_features: np.ndarray, labels: np.ndarray, k: int, eps: float) -> np.ndarray:
    """Class-level smoothing weighted by centroid proximity.

    The wrong-class mass eps is split according to a softmax of negative
    Euclidean distances between empirical class centroids, so nearer classes
    absorb more of the smoothing mass.
    """
    eps = validate_epsilon(eps)
    y = _check_labels(labels, k)
    x = np.asarray(train_features, dtype=np.float64)
    if x.shape[0] != y.size:
        raise ShapeError("features and labels must align")
    centroids = np.stack([x[y == c].mean(axis=0) for c in range(k)])
    dist = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
    out = np.empty((y.size, k), dtype=np.float64)
    for c in range(k):
        wrong = [j for j in range(k) if j != c]
        score = -dist[c, wrong]
        score = np.exp(score - score.max())
        share = score / score.sum()
        row = np.zeros(k)
        row[wrong] = eps * share
        row[c] = 1.0 - eps
        out[y == c] = row
    return out


def bs_soft_targets(labels: np.ndarray, k: int, current_predictions: np.ndarray, beta: float = 0.95) -> np.ndarray:
    """Convex mix of the hard labels and the network's current predictions."""
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"beta must be in (0, 1], got {beta}")
    preds = np.asarray(current_predictions, dtype=np.float64)
    onehot = hard_targets(labels, k)
    if preds.shape != onehot.shape:
        raise ShapeError("current predictions must be (N, K) aligned with labels")
    return beta * onehot + (1.0 - beta) * preds


def bs_soft_provider(labels: np.ndarray, k: int, beta: float = 0.95):
    """Per-epoch target callback for the training loop."""

    def provider(current_predictions: np.ndarray) -> np.ndarray:
        return bs_soft_targets(labels, k, current_predictions, beta)

    return provider


def beta_epsilons(n: int, alpha: float, a: float, seed: int, target_mean: float) -> np.ndarray:
    """Per-instance smoothing factors alpha_scale * (alpha + (1-alpha) * b_i).

    b_i ~ Beta(a, 1), so E[b_i] = a / (a + 1); the scale is chosen to make
    the factors average to ``target_mean``. Raises when that would push
    factors to 0.5 or beyond.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if a <= 0.0:
        raise ConfigError(f"Beta shape parameter must be > 0, got {a}")
    expected = alpha + (1.0 - alpha) * a / (a + 1.0)
    scale = target_mean / expected
    # Factors peak at the scale itself (b_i -> 1), which must stay below 0.5.
    if not 0.0 < scale < 0.5:
        raise ConfigError(
            f"target mean {target_mean} needs scale {scale:.3f} outside (0, 0.5); unreachable"
        )
    rng = np.random.default_rng(seed)
    b = rng.beta(a, 1.0, size=n)
    return scale * (alpha + (1.0 - alpha) * b)


def beta_targets(
    labels: np.ndarray,
    k: int,
    alpha: float,
    a: float,
    seed: int,
    target_mean: float,
) -> np.ndarray:
    """Uniform smoothing with i.i.d. Beta-sampled per-instance factors."""
    y = _check_labels(labels, k)
    eps = beta_epsilons(y.size, alpha, a, seed, target_mean)
    return _per_instance_ls(y, k, eps)
