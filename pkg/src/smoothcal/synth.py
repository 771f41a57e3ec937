"""Synthetic 2-D Gaussian-mixture task: sampling and the exact posterior oracle.

The canonical task has 3 classes, each a mixture of two unit-covariance
Gaussians: a high-weight "dense" component (80% of the class mass) and a
low-weight "sparse" one (20%). Because the class posteriors are known in
closed form, the exact Bayes-optimal classifier is available as a gold
standard for accuracy and calibration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

DENSE, SPARSE = "dense", "sparse"

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianComponent:
    """One unit-covariance 2-D Gaussian inside a class mixture."""

    mean: tuple[float, float]
    weight: float
    density_tag: str = DENSE

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ConfigError(f"component weight must be in (0, 1], got {self.weight}")
        if self.density_tag not in (DENSE, SPARSE):
            raise ConfigError(f"unknown density tag {self.density_tag!r}")


@dataclass(frozen=True)
class GenerativeModel:
    """Per-class Gaussian mixtures plus class priors."""

    classes: tuple[tuple[GaussianComponent, ...], ...]
    class_priors: tuple[float, ...] = ()

    def __post_init__(self):
        k = len(self.classes)
        if k < 2:
            raise ConfigError("need at least 2 classes")
        priors = self.class_priors or tuple([1.0 / k] * k)
        object.__setattr__(self, "class_priors", priors)
        if len(priors) != k or abs(sum(priors) - 1.0) > 1e-9:
            raise ConfigError("class priors must match class count and sum to 1")
        for comps in self.classes:
            total = sum(c.weight for c in comps)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"component weights sum to {total}, expected 1")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def canonical_model() -> GenerativeModel:
    """The standard 3-class constellation with an 80/20 dense/sparse split."""
    means = [
        [(-4.0, 1.0), (2.0, 1.0)],
        [(-4.0, -1.0), (2.0, -1.0)],
        [(-1.0, 0.0), (5.0, 0.0)],
    ]
    classes = tuple(
        (
            GaussianComponent(mean=m_dense, weight=0.8, density_tag=DENSE),
            GaussianComponent(mean=m_sparse, weight=0.2, density_tag=SPARSE),
        )
        for m_dense, m_sparse in means
    )
    return GenerativeModel(classes=classes)


def model_from_dict(spec: dict) -> GenerativeModel:
    """Build a model from parsed config data.

    Expected layout::

        classes:
          - components:
              - {mean: [-4, 1], weight: 0.8, density_tag: dense}
              - {mean: [2, 1], weight: 0.2, density_tag: sparse}
          - ...
        priors: [0.333.., ...]   # optional, uniform when omitted
    """
    try:
        classes = []
        for cls in spec["classes"]:
            comps = []
            for c in cls["components"]:
                mean = c["mean"]
                if len(mean) != 2:
                    raise ConfigError("component means must be 2-D")
                comps.append(
                    GaussianComponent(
                        mean=(float(mean[0]), float(mean[1])),
                        weight=float(c["weight"]),
                        density_tag=c.get("density_tag", DENSE),
                    )
                )
            classes.append(tuple(comps))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed generative-model config: {exc}") from exc
    priors = tuple(float(p) for p in spec.get("priors", ()))
    return GenerativeModel(classes=tuple(classes), class_priors=priors)


@dataclass
class LabeledDataset:
    """Features with integer labels and per-instance provenance tags."""

    features: np.ndarray  # (N, 2) float64
    labels: np.ndarray  # (N,) int64 in [0, K)
    density_tags: list[str] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or len(self.density_tags) != n:
            raise ShapeError("features, labels and density tags must have equal length")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        mask = np.asarray(mask, dtype=bool)
        tags = [t for t, keep in zip(self.density_tags, mask) if keep]
        return LabeledDataset(self.features[mask], self.labels[mask], tags, self.split)

    def dense_mask(self) -> np.ndarray:
        return np.array([t == DENSE for t in self.density_tags], dtype=bool)


def sample(model: GenerativeModel, per_class: int, seed: int, split: str = "train") -> LabeledDataset:
    """Draw ``per_class`` instances from every class mixture.

    Each instance picks a component by its weight, then samples that
    Gaussian; the chosen component's density tag is recorded. Deterministic
    for a fixed seed.
    """
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    feats, labels, tags = [], [], []
    for ci, comps in enumerate(model.classes):
        weights = np.array([c.weight for c in comps])
        choice = rng.choice(len(comps), size=per_class, p=weights)
        noise = rng.standard_normal((per_class, 2))
        means = np.array([comps[j].mean for j in choice])
        feats.append(means + noise)
        labels.append(np.full(per_class, ci, dtype=np.int64))
        tags.extend(comps[j].density_tag for j in choice)
    return LabeledDataset(
        features=np.concatenate(feats, axis=0),
        labels=np.concatenate(labels),
        density_tags=tags,
        split=split,
    )


def class_log_density(model: GenerativeModel, features: np.ndarray) -> np.ndarray:
    """log p(x | class) for every class, via log-sum-exp over components."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ShapeError(f"expected (N, 2) features, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite feature values")
    out = np.empty((x.shape[0], model.num_classes))
    for ci, comps in enumerate(model.classes):
        # log [ sum_k w_k N(x; mu_k, I) ] with the 2-D unit-covariance density
        terms = np.stack(
            [
                math.log(c.weight)
                - 0.5 * np.sum((x - np.asarray(c.mean)) ** 2, axis=1)
                - _LOG_2PI
                for c in comps
            ],
            axis=1,
        )
        m = terms.max(axis=1)
        out[:, ci] = m + np.log(np.exp(terms - m[:, None]).sum(axis=1))
    return out


def bayes_posterior(model: GenerativeModel, features: np.ndarray) -> np.ndarray:
    """Exact class posterior p(class | x); rows sum to 1 within 1e-12."""
    log_joint = class_log_density(model, features) + np.log(np.asarray(model.class_priors))
    m = log_joint.max(axis=1, keepdims=True)
    unnorm = np.exp(log_joint - m)
    return unnorm / unnorm.sum(axis=1, keepdims=True)


def bayes_report(model: GenerativeModel, test: LabeledDataset, bins=None):
    """Score the exact posterior as a classifier on ``test``."""
    from .calib import BinningSpec, evaluate

    if len(test) == 0:
        raise ShapeError("empty test set")
    probs = bayes_posterior(model, test.features)
    return evaluate(probs, test.labels, bins or BinningSpec(), subset_tags=test.density_tags)


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write instances as ``x1,x2,label,density_tag,split`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "label", "density_tag", "split"])
        for (x1, x2), lab, tag in zip(dataset.features, dataset.labels, dataset.density_tags):
            writer.writerow([repr(float(x1)), repr(float(x2)), int(lab), tag, dataset.split])


def load_csv(path) -> dict[str, LabeledDataset]:
    """Read datasets written by :func:`save_csv`, keyed by split name."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["split"], []).append(rec)
    out = {}
    for split, recs in rows.items():
        out[split] = LabeledDataset(
            features=np.array([[float(r["x1"]), float(r["x2"])] for r in recs]),
            labels=np.array([int(r["label"]) for r in recs], dtype=np.int64),
            density_tags=[r["density_tag"] for r in recs],
            split=split,
        )
    return out
