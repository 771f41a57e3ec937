"""Dense feed-forward classifier with soft-target cross-entropy training.

The model is a plain ReLU MLP trained full-batch by default (batch size is
configurable). Training tracks validation loss every epoch, stops early
after a patience window without improvement, and returns the parameters
from the best validation epoch. Targets may be a fixed probability matrix
or a per-epoch callback receiving the network's current training-set
predictions (used by the bootstrapped-soft-targets baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .errors import ConfigError, NumericError, ShapeError, TrainingDiverged

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (64, 64, 64, 64, 64)
    num_classes: int = 3
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError("layer widths must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_layers, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class NetworkModel:
    arch: ArchitectureSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_seed: int = 0

    def __post_init__(self):
        expected = self.arch.layer_sizes
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise ShapeError("layer count mismatch with architecture")
        for (fin, fout), w, b in zip(expected, self.weights, self.biases):
            if w.shape != (fin, fout) or b.shape != (fout,):
                raise ShapeError(f"layer shape {w.shape}/{b.shape} != ({fin},{fout})")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError("non-finite parameters")

    def copy(self) -> "NetworkModel":
        return NetworkModel(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            rng_seed=self.rng_seed,
        )

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


INIT_SCHEMES = ("fan_in_uniform", "he_uniform")


def init_model(arch: ArchitectureSpec, seed: int, scheme: str = "fan_in_uniform") -> NetworkModel:
    """Random initialization of a fresh model.

    ``fan_in_uniform`` (default) draws weights and biases from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)); its small scale makes a deep ReLU
    net start out near-linear, which is what lets early stopping find
    well-generalizing snapshots on tiny training sets. ``he_uniform`` is
    the classic sqrt(6/fan_in) bound with zero biases.
    """
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fin, fout in arch.layer_sizes:
        if scheme == "he_uniform":
            bound = math.sqrt(6.0 / fin)
            weights.append(rng.uniform(-bound, bound, size=(fin, fout)))
            biases.append(np.zeros(fout))
        else:
            bound = 1.0 / math.sqrt(fin)
            weights.append(rng.uniform(-bound, bound, size=(fin, fout)))
            biases.append(rng.uniform(-bound, bound, size=fout))
    return NetworkModel(arch=arch, weights=weights, biases=biases, rng_seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-2
    max_epochs: int = 500
    early_stop_patience: int = 10
    batch_size: int | None = None  # None = full batch
    momentum: float = 0.9
    weight_decay: float = 0.0
    temperature: float = 1.0  # applied to final logits during training

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.early_stop_patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")


@dataclass
class TrainLog:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1  # index into the loss lists; -1 when no epoch ran
    stopped_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch] if self.best_epoch >= 0 else math.nan


def _check_features(model: NetworkModel, features: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ShapeError(
            f"expected (N, {model.arch.input_dim}) features, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite feature values")
    return x


def validate_targets(targets: np.ndarray, k: int) -> np.ndarray:
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != k:
        raise ShapeError(f"targets must be (N, {k}), got {y.shape}")
    if y.size:
        if y.min() < -1e-12 or y.max() > 1.0 + 1e-12:
            raise ShapeError("target entries must lie in [0, 1]")
        if np.abs(y.sum(axis=1) - 1.0).max() > 1e-9:
            raise ShapeError("target rows must sum to 1")
    return y


def forward(model: NetworkModel, features: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Class probabilities; rows sum to 1 and are floored at 1e-12."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    x = _check_features(model, features)
    probs = backend.forward(model.weights, model.biases, x, temperature)
    return np.maximum(probs, PROB_FLOOR)


def soft_cross_entropy(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over instances of -sum_j target_j * log(prediction_j)."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {y.shape}")
    validate_targets(y, y.shape[1] if y.ndim == 2 else -1)
    return float(-np.mean(np.sum(y * np.log(np.clip(p, PROB_FLOOR, None)), axis=1)))


class _Adam:
    def __init__(self, model: NetworkModel, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in model.weights]
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.m_b = [np.zeros_like(b) for b in model.biases]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, model, grads_w, grads_b):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for li in range(len(model.weights)):
            for params, grad, m, v in (
                (model.weights[li], grads_w[li], self.m_w[li], self.v_w[li]),
                (model.biases[li], grads_b[li], self.m_b[li], self.v_b[li]),
            ):
                m *= self.b1
                m += (1 - self.b1) * grad
                v *= self.b2
                v += (1 - self.b2) * grad * grad
                params -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGDMomentum:
    def __init__(self, model: NetworkModel, lr: float, momentum: float):
        self.lr, self.momentum = lr, momentum
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, model, grads_w, grads_b):
        for li in range(len(model.weights)):
            self.v_w[li] = self.momentum * self.v_w[li] - self.lr * grads_w[li]
            model.weights[li] += self.v_w[li]
            self.v_b[li] = self.momentum * self.v_b[li] - self.lr * grads_b[li]
            model.biases[li] += self.v_b[li]


def train(
    model: NetworkModel,
    train_features: np.ndarray,
    train_targets,
    val_features: np.ndarray,
    val_targets,
    cfg: TrainConfig,
) -> tuple[NetworkModel, TrainLog]:
    """Train and return the snapshot from the best-validation-loss epoch.

    ``train_targets``/``val_targets`` are either fixed (N, K) matrices or
    callables mapping the current epoch's predictions on that split to a
    target matrix (recomputed every epoch).
    """
    x_tr = _check_features(model, train_features)
    x_val = _check_features(model, val_features)
    if x_tr.shape[0] == 0 or x_val.shape[0] == 0:
        raise ShapeError("training and validation sets must be non-empty")
    k = model.arch.num_classes

    tr_provider = train_targets if callable(train_targets) else None
    val_provider = val_targets if callable(val_targets) else None
    y_tr = None if tr_provider else validate_targets(train_targets, k)
    y_val = None if val_provider else validate_targets(val_targets, k)
    if y_tr is not None and y_tr.shape[0] != x_tr.shape[0]:
        raise ShapeError("training targets must align with training features")
    if y_val is not None and y_val.shape[0] != x_val.shape[0]:
        raise ShapeError("validation targets must align with validation features")

    work = model.copy()
    log = TrainLog()
    if cfg.max_epochs == 0:
        return work, log

    n = x_tr.shape[0]
    full_batch = cfg.batch_size is None or cfg.batch_size >= n

    # The compiled backend fuses the whole loop; per-epoch target callbacks
    # take the generic path below. Mini-batch permutations are drawn up
    # front from the same stream the generic loop uses, so both paths see
    # identical batches.
    kernel = backend.active_backend()
    if tr_provider is None and val_provider is None and hasattr(kernel, "train_run"):
        order = None
        if not full_batch:
            rng = np.random.default_rng((work.rng_seed, 0x5F0E))
            order = np.stack([rng.permutation(n) for _ in range(cfg.max_epochs)])
        (best_w, best_b, tr_losses, val_losses, best_epoch, stopped, div_epoch, div_loss) = kernel.train_run(
            work.weights,
            work.biases,
            x_tr,
            y_tr,
            x_val,
            y_val,
            cfg.optimizer,
            cfg.learning_rate,
            cfg.max_epochs,
            cfg.early_stop_patience,
            cfg.momentum,
            cfg.weight_decay,
            cfg.temperature,
            order,
            0 if full_batch else cfg.batch_size,
        )
        if div_epoch >= 0:
            raise TrainingDiverged(div_epoch, div_loss)
        work.weights, work.biases = best_w, best_b
        log.train_losses = tr_losses
        log.val_losses = val_losses
        log.best_epoch = best_epoch
        log.stopped_epoch = stopped
        return work, log

    if cfg.optimizer == "adam":
        opt = _Adam(work, cfg.learning_rate)
    else:
        opt = _SGDMomentum(work, cfg.learning_rate, cfg.momentum)

    shuffle_rng = np.random.default_rng((work.rng_seed, 0x5F0E)) if not full_batch else None

    best_val = math.inf
    best_w = best_b = None
    since_best = 0

    for epoch in range(cfg.max_epochs):
        if tr_provider is not None:
            probs_tr = forward(work, x_tr, cfg.temperature)
            y_tr = validate_targets(tr_provider(probs_tr), k)

        if full_batch:
            loss, gw, gb = backend.loss_and_grads(
                work.weights, work.biases, x_tr, y_tr, cfg.temperature, cfg.weight_decay
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            opt.step(work, gw, gb)
            epoch_loss = loss
        else:
            order = shuffle_rng.permutation(n)
            batch_losses = []
            for start in range(0, n, cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                loss, gw, gb = backend.loss_and_grads(
                    work.weights,
                    work.biases,
                    np.ascontiguousarray(x_tr[sel]),
                    np.ascontiguousarray(y_tr[sel]),
                    cfg.temperature,
                    cfg.weight_decay,
                )
                if not math.isfinite(loss):
                    raise TrainingDiverged(epoch, loss)
                opt.step(work, gw, gb)
                batch_losses.append(loss)
            epoch_loss = float(np.mean(batch_losses))

        probs_val = forward(work, x_val, cfg.temperature)
        if val_provider is not None:
            y_val = validate_targets(val_provider(probs_val), k)
        val_loss = soft_cross_entropy(probs_val, y_val)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, val_loss)

        log.train_losses.append(epoch_loss)
        log.val_losses.append(val_loss)
        log.stopped_epoch = epoch + 1

        if val_loss < best_val:
            best_val = val_loss
            log.best_epoch = epoch
            best_w = [w.copy() for w in work.weights]
            best_b = [b.copy() for b in work.biases]
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break

    if best_w is not None:
        work.weights, work.biases = best_w, best_b
    return work, log


def _loss_only(model: NetworkModel, x, y, temperature, weight_decay) -> float:
    probs = backend.forward(model.weights, model.biases, x, temperature)
    loss = float(-np.mean(np.sum(y * np.log(np.clip(probs, PROB_FLOOR, None)), axis=1)))
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in model.weights)
    return loss


def gradient_check(
    model: NetworkModel,
    features: np.ndarray,
    targets: np.ndarray,
    epsilon: float = 1e-5,
    temperature: float = 1.0,
    weight_decay: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-7 <= epsilon <= 1e-4:
        raise ConfigError("epsilon must lie in [1e-7, 1e-4]")
    if model.num_params() >= 10_000:
        raise ConfigError("gradient check is limited to models under 10k parameters")
    x = _check_features(model, features)
    y = validate_targets(targets, model.arch.num_classes)

    _, gw, gb = backend.loss_and_grads(
        model.weights, model.biases, x, y, temperature, weight_decay
    )
    work = model.copy()
    worst = 0.0
    # Central differences resolve nothing below ~eps_machine * loss / (2 eps)
    # (~1e-11 here); the denominator floor keeps dead-path parameters with
    # true-zero gradients from registering as spurious relative error.
    floor = 1e-6
    for analytic_list, param_list in ((gw, work.weights), (gb, work.biases)):
        for analytic, params in zip(analytic_list, param_list):
            flat = params.reshape(-1)
            aflat = analytic.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                hi = _loss_only(work, x, y, temperature, weight_decay)
                flat[idx] = orig - epsilon
                lo = _loss_only(work, x, y, temperature, weight_decay)
                flat[idx] = orig
                fd = (hi - lo) / (2.0 * epsilon)
                denom = max(abs(aflat[idx]) + abs(fd), floor)
                worst = max(worst, abs(aflat[idx] - fd) / denom)
    return worst


def clone_architecture(model: NetworkModel, seed: int) -> NetworkModel:
    """Fresh He-uniform initialization of the same architecture."""
    return init_model(replace(model.arch), seed)
