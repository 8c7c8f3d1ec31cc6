"""Input checks shared by the estimator and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError
from .sparse_core import as_csc


def check_matrix(X, name="X", n_cols=None, n_rows=None):
    """Validate ``X`` (dense or sparse) and return it as canonical float64 CSC."""
    X = check_array(X, accept_sparse=("csc", "csr", "coo"), dtype=np.float64,
                    ensure_2d=True, ensure_min_samples=0, ensure_min_features=0)
    X = as_csc(X)
    if n_cols is not None and X.shape[1] != n_cols:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {n_cols}")
    if n_rows is not None and X.shape[0] != n_rows:
        raise ShapeError(f"{name} has {X.shape[0]} rows, expected {n_rows}")
    return X


def check_rank(k, shape):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"n_components must be a positive integer, got {k!r}")
    if k > min(shape):
        raise ShapeError(f"n_components={k} exceeds min{tuple(shape)}")
    return int(k)
