"""Teacher-student distillation with a weighted soft/hard objective.

The student minimizes kd_weight * CE(student, teacher soft targets) +
hard_weight * CE(student, one-hot labels). Cross-entropy is linear in the
target, so the composite objective equals soft-target training on the
blended matrix; epoch selection uses the same blended objective on the
validation split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calib import BinningSpec, evaluate, scale_probs
from .errors import ConfigError, ShapeError
from .nn import ArchitectureSpec, NetworkModel, TrainConfig, TrainLog, forward, init_model, train
from .smoothing import hard_targets
from .synth import LabeledDataset


@dataclass(frozen=True)
class DistillConfig:
    kd_weight: float = 1.0
    teacher_temperature: float = 1.0
    student_temperature: float = 1.0
    # Multiply the soft term by teacher_temperature^2 (classic gradient
    # rescaling); irrelevant at temperature 1.
    compensate_temperature: bool = False

    def __post_init__(self):
        if not 0.0 <= self.kd_weight <= 1.0:
            raise ConfigError("kd_weight must be in [0, 1]")
        if self.teacher_temperature <= 0 or self.student_temperature <= 0:
            raise ConfigError("temperatures must be > 0")

    @property
    def hard_weight(self) -> float:
        return 1.0 - self.kd_weight


def blended_targets(
    teacher_probs: np.ndarray, labels: np.ndarray, k: int, cfg: DistillConfig
) -> np.ndarray:
    """kd_weight * teacher-soft + hard_weight * one-hot, per instance."""
    soft = scale_probs(teacher_probs, cfg.teacher_temperature)
    kd = cfg.kd_weight
    hard = cfg.hard_weight
    if cfg.compensate_temperature:
        t2 = cfg.teacher_temperature**2
        total = kd * t2 + hard
        kd, hard = kd * t2 / total, hard / total
    out = kd * soft + hard * hard_targets(labels, k)
    return out / out.sum(axis=1, keepdims=True)


def distill(
    teacher_predict,
    student_arch: ArchitectureSpec,
    train_data: LabeledDataset,
    val_data: LabeledDataset,
    cfg: DistillConfig,
    train_cfg: TrainConfig,
    seed: int,
    test_data: LabeledDataset | None = None,
    bins: BinningSpec = BinningSpec(),
) -> tuple[NetworkModel, TrainLog, object]:
    """Train a student against a teacher's predictions.

    ``teacher_predict`` maps a feature matrix to a probability matrix; both
    a trained network (via a lambda over :func:`smoothcal.nn.forward`) and
    the exact-posterior oracle fit that contract. Returns the student, its
    training log, and a calibration report on ``test_data`` (None when no
    test set is given).
    """
    k = student_arch.num_classes
    t_train = np.asarray(teacher_predict(train_data.features), dtype=np.float64)
    t_val = np.asarray(teacher_predict(val_data.features), dtype=np.float64)
    if t_train.shape != (len(train_data), k) or t_val.shape != (len(val_data), k):
        raise ShapeError("teacher predictions must be (N, K) per split")

    y_train = blended_targets(t_train, train_data.labels, k, cfg)
    y_val = blended_targets(t_val, val_data.labels, k, cfg)

    student = init_model(student_arch, seed)
    train_cfg = replace(train_cfg, temperature=cfg.student_temperature)
    student, log = train(
        student, train_data.features, y_train, val_data.features, y_val, train_cfg
    )

    report = None
    if test_data is not None:
        probs = forward(student, test_data.features)
        report = evaluate(probs, test_data.labels, bins, subset_tags=test_data.density_tags)
    return student, log, report
