"""Per-prompt test-time pruning of transformer linear layers.

Every scalar weight is treated as a one-parameter expert; a cheap
activation-aware score computed from the prompt itself decides, per row of
every linear layer, which k = floor(rho*d) experts stay active.
"""

__version__ = "0.1.0"

from .linalg import NotPositiveDefiniteError, ShapeError
from .model import Model, ModelConfig, load_model, perplexity, save_model
from .pruner import (
    CalibrationRecord,
    PruneConfig,
    PrunedModel,
    calibrate_offline,
    prune_offline,
    prune_online,
)
from .scoring import ActivationStats, collect_stats
from .selection import SelectionParams, SparsityMask, select
from .sparse import RowSparseMatrix, approx_loss, compress, sparse_matmul

__all__ = [
    "ActivationStats", "CalibrationRecord", "Model", "ModelConfig",
    "NotPositiveDefiniteError", "PruneConfig", "PrunedModel",
    "RowSparseMatrix", "SelectionParams", "ShapeError", "SparsityMask",
    "approx_loss", "calibrate_offline", "collect_stats", "compress",
    "load_model", "perplexity", "prune_offline", "prune_online",
    "save_model", "select", "sparse_matmul", "__version__",
]
