"""Dense reference updates of a truncated SVD.

These materialise the augmented matrix ``(I - U U^T) E`` and rotate the full
``U`` and ``V`` factors, so every update costs O((m + n) k (k + s)). They are
used as correctness oracles for :mod:`isvd.engine` and as the speed baseline.
All of them share :func:`isvd.sparse_core.small_svd` and the seeded starting
vectors of :mod:`isvd.sv_lcov`, so differences against the engine come from
the sparse pathway alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .exceptions import ShapeError, TooLarge
from .sparse_core import as_csc, dense_mgs, small_svd
from .sv_lcov import RANK_TOL, initial_block, initial_vector, orthonormal_columns
from .timing import lap, start

DENSE_CAP = 4_000_000


@dataclass
class DenseSvdTriple:
    """``U diag(sigma) V^T`` with dense orthonormal ``U`` and ``V``."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def k(self):
        return self.sigma.size

    def reconstruct(self, cap=DENSE_CAP):
        if self.U.shape[0] * self.V.shape[0] > cap:
            raise TooLarge(f"{self.U.shape[0]}x{self.V.shape[0]} exceeds the {cap:g}-entry cap")
        return (self.U * self.sigma) @ self.V.T

    def copy(self):
        return DenseSvdTriple(self.U.copy(), self.sigma.copy(), self.V.copy())

    def transpose(self):
        return DenseSvdTriple(self.V.copy(), self.sigma.copy(), self.U.copy())


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)


def direct_truncated_svd(A, k, cap=DENSE_CAP) -> DenseSvdTriple:
    """Optimal rank-``k`` factorization of ``A`` from a full dense SVD."""
    m, n = A.shape
    if not 0 < k <= min(m, n):
        raise ShapeError(f"k={k} out of range for shape {A.shape}")
    if m * n > cap:
        raise TooLarge(f"{m}x{n} exceeds the {cap:g}-entry cap")
    F, theta, G = small_svd(_dense(A), k)
    return DenseSvdTriple(F, theta, G)


def initial_svd(A, k, cap=DENSE_CAP, seed=0) -> DenseSvdTriple:
    """Rank-``k`` SVD for initialising a run.

    Small inputs use :func:`direct_truncated_svd`; larger ones use ARPACK
    through ``scipy.sparse.linalg.svds`` with a seeded start vector.
    """
    m, n = A.shape
    if m * n <= cap or k >= min(m, n) - 1:
        return direct_truncated_svd(A, k, cap=max(cap, m * n))
    A = as_csc(A)
    v0 = np.random.default_rng(seed).standard_normal(min(m, n))
    U, s, Vt = scipy.sparse.linalg.svds(A, k=k, v0=v0)
    order = np.argsort(-s, kind="stable")
    U, s, V = U[:, order], s[order], Vt[order].T
    # re-orthonormalise through a small SVD so the invariants hold tightly
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    F, theta, G = small_svd((Ru * s) @ Rv.T, k)
    return DenseSvdTriple(Qu @ F, theta, Qv @ G)


def _augmented_qr(U, E, rank_tol=RANK_TOL):
    # Q, R of (I - U U^T) E with dependent columns dropped from Q and R.
    # LAPACK Householder QR when every column keeps enough length,
    # otherwise MGS with the zero-column policy.
    proj = U.T @ E
    Z = E - U @ proj
    norms = np.linalg.norm(E, axis=0)
    Q, R = scipy.linalg.qr(Z, mode="economic", check_finite=False)
    d = np.diag(R)
    flip = d < 0
    Q[:, flip] *= -1
    R[flip] *= -1
    if np.all(np.abs(d) > rank_tol * norms) and np.all(norms > 0):
        # one projection pass keeps [U Q] orthonormal to working precision
        Q -= U @ (U.T @ Q)
        return proj, Q, R
    Q, R = dense_mgs(Z, norms, rank_tol)
    keep = np.diag(R) > 0
    return proj, Q[:, keep], R[keep]


def _augment(U, E, mode="exact", l=10, t=3, seed=0):
    # (U^T E, Q, tail) where Z = (I - U U^T) E ~= Q tail
    if mode == "exact":
        return _augmented_qr(U, E)
    proj = U.T @ E
    Z = E - U @ proj
    l = min(l, E.shape[1])
    if mode == "gkl":
        Q, P = dense_gkl(Z, l, seed, scale=np.linalg.norm(E))
    elif mode == "rpi":
        Q, P = dense_rpi(Z, l, t, seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return proj, Q, P.T


def _rotate(U, Q, F, k):
    return U @ F[:k] + Q @ F[k:]


def zha_simon_add_columns(T: DenseSvdTriple, E_c, timer=None, mode="exact", l=10, t=3,
                          seed=0) -> DenseSvdTriple:
    """Rank-``k`` SVD of ``[U diag(sigma) V^T, E_c]`` by the dense formula.

    ``mode="gkl"``/``"rpi"`` swap the exact QR of the augmented matrix for an
    ``l``-dimensional approximate basis (see :func:`dense_gkl_update`).
    """
    E = _dense(E_c)
    if E.ndim != 2 or E.shape[0] != T.U.shape[0]:
        raise ShapeError(f"shape: E_c{E.shape} vs U{T.U.shape}")
    start(timer)
    k, s = T.k, E.shape[1]
    if s == 0:
        lap(timer, "post_svd")
        return T.copy()
    proj, Q, tail = _augment(T.U, E, mode, l, t, seed)
    r = tail.shape[0]
    core = np.zeros((k + r, k + s))
    core[np.arange(k), np.arange(k)] = T.sigma
    core[:k, k:] = proj
    core[k:, k:] = tail
    lap(timer, "pre_svd")
    F, theta, G = small_svd(core, k)
    lap(timer, "svd")
    U = _rotate(T.U, Q, F, k)
    V = np.vstack([T.V @ G[:k], G[k:]])
    lap(timer, "post_svd")
    return DenseSvdTriple(U, theta, V)


def zha_simon_add_rows(T: DenseSvdTriple, E_r, timer=None, **variant) -> DenseSvdTriple:
    """Rank-``k`` SVD of the vertical stack ``[A_k; E_r]``."""
    E = _dense(E_r)
    return zha_simon_add_columns(T.transpose(), E.T, timer, **variant).transpose()


def zha_simon_update_weights(T: DenseSvdTriple, D, E_m, timer=None, mode="exact", l=10, t=3,
                             seed=0) -> DenseSvdTriple:
    """Rank-``k`` SVD of ``A_k + D E_m^T`` by the dense formula.

    In approximate modes the ``D`` side uses ``seed`` and the ``E_m`` side
    ``seed + 1``, as the engine does.
    """
    D = _dense(D)
    E = _dense(E_m)
    if D.shape[0] != T.U.shape[0] or E.shape[0] != T.V.shape[0] or D.shape[1] != E.shape[1]:
        raise ShapeError(f"shape: D{D.shape}, E_m{E.shape}")
    start(timer)
    k = T.k
    if D.shape[1] == 0:
        lap(timer, "post_svd")
        return T.copy()
    pd, Qd, Td = _augment(T.U, D, mode, l, t, seed)
    pe, Qe, Te = _augment(T.V, E, mode, l, t, seed + 1)
    core = np.vstack([pd, Td]) @ np.vstack([pe, Te]).T
    core[np.arange(k), np.arange(k)] += T.sigma
    lap(timer, "pre_svd")
    F, theta, G = small_svd(core, k)
    lap(timer, "svd")
    out = DenseSvdTriple(_rotate(T.U, Qd, F, k), theta, _rotate(T.V, Qe, G, k))
    lap(timer, "post_svd")
    return out


def dense_gkl_update(T: DenseSvdTriple, E, l=10, seed=0, kind="add_columns", D=None,
                     timer=None) -> DenseSvdTriple:
    """Truncated SVD update with a dense Golub-Kahan-Lanczos augmented basis.

    ``kind`` selects the operation; for ``"update_weights"`` pass ``D`` and
    ``E`` is the ``n x s`` right factor.
    """
    return _approx_update(T, E, D, kind, timer, mode="gkl", l=l, seed=seed)


def dense_rpi_update(T: DenseSvdTriple, E, l=10, t=3, seed=0, kind="add_columns", D=None,
                     timer=None) -> DenseSvdTriple:
    """Truncated SVD update with a dense randomized power-iteration basis."""
    return _approx_update(T, E, D, kind, timer, mode="rpi", l=l, t=t, seed=seed)


def _approx_update(T, E, D, kind, timer, **variant):
    if kind == "add_columns":
        return zha_simon_add_columns(T, E, timer, **variant)
    if kind == "add_rows":
        return zha_simon_add_rows(T, E, timer, **variant)
    if kind == "update_weights":
        return zha_simon_update_weights(T, D, E, timer, **variant)
    raise ValueError(f"unknown update kind {kind!r}")


def dense_gkl(Z, l, seed=0, scale=None, rank_tol=RANK_TOL, breakdown_tol=1e-12):
    """Golub-Kahan-Lanczos on a dense matrix.

    Returns ``(Q, P)`` with ``Q`` orthonormal (``m x j``, ``j <= l``) and
    ``P`` (``s x j``) such that ``Z ~= Q P^T``. The start vector and stopping
    rules match :func:`isvd.sv_lcov.gkl_basis`; ``scale`` is the norm the
    stopping thresholds are relative to (default ``||Z||_F``).
    """
    Z = np.asarray(Z, dtype=np.float64)
    s = Z.shape[1]
    if not 1 <= l <= s:
        raise ShapeError(f"need 1 <= l <= {s}, got l={l}")
    if scale is None:
        scale = np.linalg.norm(Z)
    qs, ps, alphas, betas = [], [initial_vector(s, seed)], [], []
    for i in range(l):
        q = Z @ ps[i]
        if i:
            q -= betas[-1] * qs[-1]
        alpha = np.linalg.norm(q)
        if alpha == 0.0 or alpha <= rank_tol * scale:
            break
        qs.append(q / alpha)
        alphas.append(alpha)
        pn = Z.T @ qs[-1] - alpha * ps[i]
        Pm = np.column_stack(ps)
        for _ in range(2):
            pn -= Pm @ (Pm.T @ pn)
        beta = np.linalg.norm(pn)
        if beta <= breakdown_tol * scale:
            betas.append(0.0)
            ps.append(np.zeros(s))
            break
        ps.append(pn / beta)
        betas.append(beta)
    j = len(alphas)
    if j == 0:
        return np.zeros((Z.shape[0], 0)), np.zeros((s, 0))
    H = np.zeros((j, j + 1))
    H[np.arange(j), np.arange(j)] = alphas
    H[np.arange(j), np.arange(1, j + 1)] = betas[:j]
    return np.column_stack(qs), np.column_stack(ps[: j + 1]) @ H.T


def dense_rpi(Z, l, t=3, seed=0, rank_tol=RANK_TOL):
    """Randomized power iteration on a dense matrix; returns ``(Q, P)``."""
    Z = np.asarray(Z, dtype=np.float64)
    s = Z.shape[1]
    if not 1 <= l <= s:
        raise ShapeError(f"need 1 <= l <= {s}, got l={l}")
    P = initial_block(s, l, seed)
    Q = np.zeros((Z.shape[0], 0))
    for _ in range(t):
        P = orthonormal_columns(P, rank_tol)
        if P.shape[1] == 0:
            break
        Qf, R = dense_mgs(Z @ P, rank_tol=rank_tol)
        Q = Qf[:, np.diag(R) > 0]
        P = Z.T @ Q
    if P.shape[1] != Q.shape[1]:
        return np.zeros((Z.shape[0], 0)), np.zeros((s, 0))
    return Q, P
