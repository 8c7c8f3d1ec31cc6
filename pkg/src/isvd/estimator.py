"""scikit-learn style wrapper around the incremental truncated SVD engine."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import engine
from ._validation import check_matrix, check_rank
from .baselines import initial_svd
from .engine import VariantConfig


class IncrementalTruncatedSVD(TransformerMixin, BaseEstimator):
    """Rank-``n_components`` SVD kept current as a sparse matrix grows.

    ``fit`` computes the initial factorization; ``partial_fit`` appends rows
    (samples), ``add_columns`` appends features and ``update_weights`` adds a
    low-rank correction ``D @ E.T``. Each update costs time proportional to
    the update's nonzeros rather than to the matrix size.

    Parameters
    ----------
    n_components : int
        Rank ``k`` of the maintained factorization.
    variant : {"exact", "gkl", "rpi"}
        How the augmented space of each update is built.
    n_lanczos : int
        Basis size ``l`` for the approximate variants.
    n_power_iter : int
        Power iterations ``t`` for ``variant="rpi"``.
    random_state : int
        Seed of the approximate variants and of large initial SVDs.
    reset_threshold : float
        Condition number of the small factors above which they are folded
        back into the tall ones.

    Attributes
    ----------
    state_ : TruncatedSvdState
    components_ : ndarray (n_components, n_features)
        Right singular vectors, as in ``sklearn.decomposition.TruncatedSVD``.
    singular_values_ : ndarray (n_components,)
    """

    def __init__(self, n_components=16, variant="exact", n_lanczos=10, n_power_iter=3,
                 random_state=0, reset_threshold=1e8):
        self.n_components = n_components
        self.variant = variant
        self.n_lanczos = n_lanczos
        self.n_power_iter = n_power_iter
        self.random_state = random_state
        self.reset_threshold = reset_threshold

    def _config(self):
        return VariantConfig(mode=self.variant, l=self.n_lanczos, t=self.n_power_iter,
                             seed=self.random_state, reset_threshold=self.reset_threshold)

    def fit(self, X, y=None):
        X = check_matrix(X)
        k = check_rank(self.n_components, X.shape)
        self._config()
        T = initial_svd(X, k, seed=self.random_state)
        self.state_ = engine.init(T.U, T.sigma, T.V)
        self.n_features_in_ = X.shape[1]
        return self

    def partial_fit(self, X, y=None):
        """Append the rows of ``X``; fits from scratch on the first call."""
        if not hasattr(self, "state_"):
            return self.fit(X)
        X = check_matrix(X, n_cols=self.state_.n)
        engine.add_rows(self.state_, X, self._config())
        return self

    def add_columns(self, X):
        """Append the columns of ``X`` (``n_samples_seen x s``) as new features."""
        check_is_fitted(self)
        X = check_matrix(X, n_rows=self.state_.m)
        engine.add_columns(self.state_, X, self._config())
        self.n_features_in_ = self.state_.n
        return self

    def update_weights(self, D, E):
        """Add ``D @ E.T`` to the tracked matrix."""
        check_is_fitted(self)
        D = check_matrix(D, "D", n_rows=self.state_.m)
        E = check_matrix(E, "E", n_rows=self.state_.n, n_cols=D.shape[1])
        engine.update_weights(self.state_, D, E, self._config())
        return self

    def health_reset(self):
        check_is_fitted(self)
        engine.health_reset(self.state_)
        return self

    @property
    def components_(self):
        check_is_fitted(self)
        return self.state_.right_vectors().T

    @property
    def singular_values_(self):
        check_is_fitted(self)
        return self.state_.sigma.copy()

    def transform(self, X):
        """Project rows of ``X`` onto the right singular vectors."""
        check_is_fitted(self)
        X = check_matrix(X, n_cols=self.state_.n)
        return np.asarray(X @ self.state_.right_vectors())

    def fit_transform(self, X, y=None):
        self.fit(X)
        return self.state_.left_vectors() * self.state_.sigma

    def inverse_transform(self, Z):
        check_is_fitted(self)
        return np.asarray(Z) @ self.components_
