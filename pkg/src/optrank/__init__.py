"""Model rank, optimistic sample sizes and sample-size sweeps.

Modules: ``model_zoo`` (families, evaluation, gradients), ``targets``,
``rank`` (model rank and closed forms), ``trainer`` (full-batch GD),
``harness`` (sweeps and run directories), ``report`` and ``cli``.
"""

from .errors import ConfigError, FamilyError, OptRankError, RunDirError, ShapeError, TargetError
from .model_zoo import (
    Kind,
    ModelFamily,
    deep_diagonal,
    evaluate,
    linear3,
    matrix_factorization,
    param_count,
    param_gradient,
    reparam_linear4,
    two_layer_cnn,
    two_layer_fc,
)
from .rank import (
    RankReport,
    closed_form_optimistic,
    feature_matrix,
    max_rank,
    minimizer_point,
    null_embed,
    numerical_rank,
    rank_at_point,
)
from .targets import TargetSpec, evaluate_target, get_target, make_target
from .trainer import Dataset, TrainConfig, TrainResult, gd_fit, lr_search, sample_dataset
from .harness import SweepGrid, SweepSpec, TransitionReport, detect_transitions, load, persist, run_sweep

__version__ = "0.1.0"
