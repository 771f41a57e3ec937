"""Instance-based label smoothing toolkit.

Trains small feed-forward classifiers with hard, uniformly smoothed, and
teacher-guided instance-smoothed targets; measures confidence- and
classwise-calibration; and reproduces the synthetic-mixture experiments
against the exact posterior oracle.
"""

from .backend import backend_name
from .calib import BinningSpec, CalibrationReport, TemperatureFit, cwece, ece, evaluate, fit_temperature, prediction_histograms
from .distill import DistillConfig, distill
from .nn import ArchitectureSpec, NetworkModel, TrainConfig, forward, gradient_check, init_model, soft_cross_entropy, train
from .smoothing import (
    CurveParams,
    TeacherPredictions,
    beta_targets,
    bs_soft_targets,
    cls_targets,
    hard_targets,
    ils1_epsilon,
    ils1_targets,
    ils2_targets,
    ils_targets,
    standard_ls,
)
from .synth import GaussianComponent, GenerativeModel, LabeledDataset, bayes_posterior, bayes_report, canonical_model, sample

__version__ = "0.1.0"
