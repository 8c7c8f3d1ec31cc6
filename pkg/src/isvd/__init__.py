"""Incremental truncated SVD for sparse, evolving matrices."""

from .baselines import DenseSvdTriple, direct_truncated_svd
from .engine import (TruncatedSvdState, UpdateBatch, VariantConfig, add_columns, add_rows,
                     apply_batch, health_reset, init, query_left, query_right, reconstruct,
                     update_weights)
from .estimator import IncrementalTruncatedSVD
from .exceptions import ISVDError
from .persistence import load, save

__version__ = "0.1.0"

__all__ = [
    "DenseSvdTriple", "ISVDError", "IncrementalTruncatedSVD", "TruncatedSvdState",
    "UpdateBatch", "VariantConfig", "add_columns", "add_rows", "apply_batch",
    "direct_truncated_svd", "health_reset", "init", "load", "query_left", "query_right",
    "reconstruct", "save", "update_weights",
]
