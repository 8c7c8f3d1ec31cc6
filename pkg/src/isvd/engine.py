"""Maintained rank-k truncated SVD under sparse structural updates.

The state keeps five factors ``U' U'' diag(sigma) V''^T V'^T`` where only the
products ``U' U''`` and ``V' V''`` are orthonormal. Each update changes the
small ``k x k`` factors densely and the tall ``U'``/``V'`` factors only on the
rows touched by the update (or by appending rows), so its cost depends on the
update's nonzeros, ``k`` and the batch width, not on the matrix dimensions.

When a new ``U''`` (or ``V''``) would have a condition number above
``VariantConfig.reset_threshold``, that side is folded back instead: the
tall factor absorbs the product and the small factor becomes the identity.
Folding costs O(m k^2) for that side and is counted in ``reset_count``.

Concurrency: one writer at a time. Queries only read and may run in parallel
with each other, but not with an update in flight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import sv_lcov
from .exceptions import (BadSigma, NotOrthonormal, OutOfBounds, ShapeError,
                         SingularMatrixError, TooLarge)
from .sparse_core import as_csc, orthonormality_error, small_inverse, small_svd
from .timing import lap, start

MODES = ("exact", "gkl", "rpi")
RECONSTRUCT_CAP = 4_000_000


@dataclass(frozen=True)
class VariantConfig:
    """How the augmented space of each update is built.

    ``mode="exact"`` orthonormalises it fully; ``"gkl"`` and ``"rpi"`` use an
    ``l``-dimensional Lanczos or power-iteration approximation (``t`` rounds
    for RPI), seeded by ``seed``.
    """

    mode: str = "exact"
    l: int = 10
    t: int = 3
    seed: int = 0
    reset_threshold: float = 1e8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.l < 1 or self.t < 1:
            raise ValueError("l and t must be >= 1")
        if not self.reset_threshold > 1:
            raise ValueError("reset_threshold must exceed 1")


BATCH_KINDS = ("add_rows", "add_columns", "update_weights")


@dataclass
class UpdateBatch:
    """One mutation of the tracked matrix.

    ``add_rows``: ``e`` is ``s x n``. ``add_columns``: ``e`` is ``m x s``.
    ``update_weights``: ``d`` is ``m x s`` and ``e`` is ``n x s``; the matrix
    changes by ``d @ e.T``.
    """

    kind: str
    e: object
    d: object = None

    def __post_init__(self):
        if self.kind not in BATCH_KINDS:
            raise ValueError(f"unknown batch kind {self.kind!r}")
        if (self.d is not None) != (self.kind == "update_weights"):
            raise ValueError("d is required for update_weights and only for it")

    @property
    def width(self):
        e = as_csc(self.e)
        return e.shape[0] if self.kind == "add_rows" else e.shape[1]


class RowBuffer:
    """Tall row-major matrix whose row count grows by amortised doubling."""

    def __init__(self, data):
        data = np.array(data, dtype=np.float64, order="C", ndmin=2)
        self._data = data
        self._n = data.shape[0]

    @property
    def view(self):
        return self._data[: self._n]

    def __len__(self):
        return self._n

    def append(self, rows):
        rows = np.atleast_2d(rows)
        need = self._n + rows.shape[0]
        if need > self._data.shape[0]:
            cap = max(need, 2 * self._data.shape[0], 16)
            grown = np.empty((cap, self._data.shape[1]))
            grown[: self._n] = self.view
            self._data = grown
        self._data[self._n: need] = rows
        self._n = need

    def copy(self):
        return RowBuffer(self.view)


class _Side:
    __slots__ = ("buf", "dd", "cond")

    def __init__(self, buf, dd, cond=1.0):
        self.buf = buf
        self.dd = dd
        self.cond = cond

    @property
    def prime(self):
        return self.buf.view

    def basis(self):
        return sv_lcov.Basis(self.prime, self.dd)

    def dense(self):
        return self.prime @ self.dd

    def copy(self):
        return _Side(self.buf.copy(), self.dd.copy(), self.cond)


class TruncatedSvdState:
    """Five-factor truncated SVD ``U' U'' diag(sigma) V''^T V'^T``."""

    def __init__(self, u_prime, u_dd, sigma, v_dd, v_prime, update_count=0, reset_count=0,
                 cond_estimates=(1.0, 1.0)):
        self._u = _Side(RowBuffer(u_prime), np.array(u_dd, dtype=np.float64), cond_estimates[0])
        self._v = _Side(RowBuffer(v_prime), np.array(v_dd, dtype=np.float64), cond_estimates[1])
        self.sigma = np.array(sigma, dtype=np.float64)
        self.update_count = int(update_count)
        self.reset_count = int(reset_count)

    @property
    def m(self):
        return len(self._u.buf)

    @property
    def n(self):
        return len(self._v.buf)

    @property
    def k(self):
        return self.sigma.size

    @property
    def u_prime(self):
        return self._u.prime

    @property
    def v_prime(self):
        return self._v.prime

    @property
    def u_dd(self):
        return self._u.dd

    @property
    def v_dd(self):
        return self._v.dd

    @property
    def cond_estimates(self):
        return (self._u.cond, self._v.cond)

    def left_vectors(self):
        """Materialise ``U = U' U''``; O(m k^2)."""
        return self._u.dense()

    def right_vectors(self):
        return self._v.dense()

    def copy(self):
        new = object.__new__(TruncatedSvdState)
        new._u = self._u.copy()
        new._v = self._v.copy()
        new.sigma = self.sigma.copy()
        new.update_count = self.update_count
        new.reset_count = self.reset_count
        return new

    def transpose(self):
        """State of the transposed matrix (factors swapped, arrays copied)."""
        new = self.copy()
        new._u, new._v = new._v, new._u
        return new

    def __repr__(self):
        return (f"TruncatedSvdState(m={self.m}, n={self.n}, k={self.k}, "
                f"updates={self.update_count}, resets={self.reset_count})")


def init(U, sigma, V, tol=1e-8) -> TruncatedSvdState:
    """Start a state from a truncated SVD ``U diag(sigma) V^T``.

    ``U`` and ``V`` must have orthonormal columns (within ``tol``) and
    ``sigma`` must be nonnegative and descending.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    k = sigma.size
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != k or V.shape[1] != k or k == 0:
        raise ShapeError(f"shape: U{U.shape}, sigma({k},), V{V.shape}")
    if not np.all(np.isfinite(sigma)) or np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise BadSigma("sigma must be finite, nonnegative and sorted descending")
    for name, X in (("U", U), ("V", V)):
        if not np.all(np.isfinite(X)) or orthonormality_error(X) > tol:
            raise NotOrthonormal(f"{name} does not have orthonormal columns")
    eye = np.eye(k)
    return TruncatedSvdState(U, eye, sigma, eye, V)


class _Aug(NamedTuple):
    rows: np.ndarray   # support of the update
    b: np.ndarray      # |rows| x r sparse parts of the basis pairs
    c: np.ndarray      # k x r coefficient parts
    proj: np.ndarray   # k x s, U^T E
    tail: np.ndarray   # r x s, R (exact) or P^T (approximate)


def _augment(E, basis, cfg, seed_offset=0) -> _Aug:
    s = E.shape[1]
    if cfg.mode == "exact":
        q = sv_lcov.qr(E, basis)
        keep = q.kept
        return _Aug(q.rows, q.b[:, keep], q.c[:, keep], q.proj, q.r[keep])
    l = min(cfg.l, s)
    if cfg.mode == "gkl":
        a = sv_lcov.gkl_basis(E, basis, l, cfg.seed + seed_offset)
    else:
        a = sv_lcov.rpi_basis(E, basis, l, cfg.t, cfg.seed + seed_offset)
    return _Aug(a.rows, a.b, a.c, a.proj, a.p.T)


def _bounded_inverse(M, threshold):
    try:
        inv, cond = small_inverse(M)
    except SingularMatrixError:
        return None, np.inf
    return (inv, cond) if cond <= threshold else (None, cond)


class _Plan(NamedTuple):
    kind: str          # "rows", "append" or "fold"
    payload: tuple
    dd: np.ndarray
    cond: float


def _plan_projected(side, aug, F, k, threshold) -> _Plan:
    # U_new = U' U'' X + B F[k:]  with  X = F[:k] - C F[k:]
    Ftop, Fbot = F[:k], F[k:]
    new_dd = side.dd @ (Ftop - aug.c @ Fbot)
    delta = aug.b @ Fbot
    inv, cond = _bounded_inverse(new_dd, threshold)
    if inv is not None:
        return _Plan("rows", (aug.rows, side.prime[aug.rows] + delta @ inv), new_dd, cond)
    full = side.prime @ new_dd
    full[aug.rows] += delta
    return _Plan("fold", (full,), np.eye(k), 1.0)


def _plan_grown(side, G, k, threshold) -> _Plan:
    # V_new = [V' V'' G[:k]; G[k:]]
    Gtop, Gbot = G[:k], G[k:]
    new_dd = side.dd @ Gtop
    inv, cond = _bounded_inverse(new_dd, threshold)
    if inv is not None:
        return _Plan("append", (Gbot @ inv,), new_dd, cond)
    return _Plan("fold", (np.vstack([side.prime @ new_dd, Gbot]),), np.eye(k), 1.0)


def _commit(state, side, plan):
    if plan.kind == "rows":
        rows, values = plan.payload
        side.buf.view[rows] = values
    elif plan.kind == "append":
        side.buf.append(plan.payload[0])
    else:
        side.buf = RowBuffer(plan.payload[0])
        state.reset_count += 1
    side.dd = plan.dd
    side.cond = plan.cond


def _append(state, proj, grow, E, cfg, timer):
    k = state.k
    aug = _augment(E, proj.basis(), cfg)
    s, r = E.shape[1], aug.tail.shape[0]
    core = np.zeros((k + r, k + s))
    core[np.arange(k), np.arange(k)] = state.sigma
    core[:k, k:] = aug.proj
    core[k:, k:] = aug.tail
    lap(timer, "pre_svd")
    F, theta, G = small_svd(core, k)
    lap(timer, "svd")
    plan_p = _plan_projected(proj, aug, F, k, cfg.reset_threshold)
    plan_g = _plan_grown(grow, G, k, cfg.reset_threshold)
    _commit(state, proj, plan_p)
    _commit(state, grow, plan_g)
    state.sigma = theta
    state.update_count += 1
    lap(timer, "post_svd")


def add_columns(state: TruncatedSvdState, E_c, cfg: VariantConfig = None, timer=None):
    """Append the columns of ``E_c`` (``m x s``) and refresh the rank-k SVD.

    The result is the rank-``k`` SVD of ``[A_k  E_c]`` where ``A_k`` is the
    matrix the state currently represents. Cost (exact mode) is
    O(nnz(E_c) (k+s)^2 + (k+s)^3). The state is left untouched if the update
    raises.
    """
    cfg = cfg or VariantConfig()
    E = as_csc(E_c)
    if E.shape[0] != state.m:
        raise ShapeError(f"shape: E_c has {E.shape[0]} rows, state has m={state.m}")
    start(timer)
    if E.shape[1] == 0:
        state.update_count += 1
        lap(timer, "post_svd")
        return
    _append(state, state._u, state._v, E, cfg, timer)


def add_rows(state: TruncatedSvdState, E_r, cfg: VariantConfig = None, timer=None):
    """Append the rows of ``E_r`` (``s x n``) and refresh the rank-k SVD.

    Mirror image of :func:`add_columns`: the augmented space is built on the
    right singular vectors and ``U'`` grows by ``s`` rows.
    """
    cfg = cfg or VariantConfig()
    E = as_csc(E_r)
    if E.shape[1] != state.n:
        raise ShapeError(f"shape: E_r has {E.shape[1]} columns, state has n={state.n}")
    start(timer)
    if E.shape[0] == 0:
        state.update_count += 1
        lap(timer, "post_svd")
        return
    _append(state, state._v, state._u, as_csc(E.T), cfg, timer)


def update_weights(state: TruncatedSvdState, D, E_m, cfg: VariantConfig = None, timer=None):
    """Apply ``A <- A + D @ E_m.T`` with ``D`` ``m x s`` and ``E_m`` ``n x s``."""
    cfg = cfg or VariantConfig()
    D = as_csc(D)
    E = as_csc(E_m)
    if D.shape[0] != state.m or E.shape[0] != state.n or D.shape[1] != E.shape[1]:
        raise ShapeError(f"shape: D{D.shape}, E_m{E.shape} for state {state.m}x{state.n}")
    start(timer)
    k = state.k
    if D.shape[1] == 0:
        state.update_count += 1
        lap(timer, "post_svd")
        return
    aug_d = _augment(D, state._u.basis(), cfg, 0)
    aug_e = _augment(E, state._v.basis(), cfg, 1)
    X = np.vstack([aug_d.proj, aug_d.tail])
    Y = np.vstack([aug_e.proj, aug_e.tail])
    core = X @ Y.T
    core[np.arange(k), np.arange(k)] += state.sigma
    lap(timer, "pre_svd")
    F, theta, G = small_svd(core, k)
    lap(timer, "svd")
    plan_u = _plan_projected(state._u, aug_d, F, k, cfg.reset_threshold)
    plan_v = _plan_projected(state._v, aug_e, G, k, cfg.reset_threshold)
    _commit(state, state._u, plan_u)
    _commit(state, state._v, plan_v)
    state.sigma = theta
    state.update_count += 1
    lap(timer, "post_svd")


def apply_batch(state, batch: UpdateBatch, cfg: VariantConfig = None, timer=None):
    if batch.kind == "add_rows":
        add_rows(state, batch.e, cfg, timer)
    elif batch.kind == "add_columns":
        add_columns(state, batch.e, cfg, timer)
    else:
        update_weights(state, batch.d, batch.e, cfg, timer)


def query_left(state: TruncatedSvdState, i: int):
    """Row ``i`` of the left singular vectors, and sigma; O(k^2)."""
    if not 0 <= i < state.m:
        raise OutOfBounds(f"row {i} outside [0, {state.m})")
    return state._u.prime[i] @ state._u.dd, state.sigma.copy()


def query_right(state: TruncatedSvdState, j: int):
    """Row ``j`` of the right singular vectors, and sigma; O(k^2)."""
    if not 0 <= j < state.n:
        raise OutOfBounds(f"row {j} outside [0, {state.n})")
    return state._v.prime[j] @ state._v.dd, state.sigma.copy()


def reconstruct(state: TruncatedSvdState, cap=RECONSTRUCT_CAP):
    """Dense ``U diag(sigma) V^T``; refuses beyond ``cap`` entries."""
    if state.m * state.n > cap:
        raise TooLarge(f"{state.m}x{state.n} exceeds the {cap:g}-entry cap")
    return (state.left_vectors() * state.sigma) @ state.right_vectors().T


def health_reset(state: TruncatedSvdState):
    """Re-orthonormalise both sides and reset ``U''``, ``V''`` to identity.

    ``U' U''`` and ``V' V''`` are replaced by their thin-QR ``Q`` factors and
    the ``R`` factors are absorbed through an SVD of ``R_u diag(sigma) R_v^T``,
    so the represented matrix is preserved. O((m + n) k^2).
    """
    k = state.k
    Qu, Ru = np.linalg.qr(state.left_vectors())
    Qv, Rv = np.linalg.qr(state.right_vectors())
    F, theta, G = small_svd((Ru * state.sigma) @ Rv.T, k)
    state._u = _Side(RowBuffer(Qu @ F), np.eye(k))
    state._v = _Side(RowBuffer(Qv @ G), np.eye(k))
    state.sigma = theta
    state.reset_count += 1


def invariant_report(state: TruncatedSvdState):
    """Measured deviations used by ``--verify`` and the tests."""
    return {
        "left_orthonormality": orthonormality_error(state.left_vectors()),
        "right_orthonormality": orthonormality_error(state.right_vectors()),
        "sigma_sorted": bool(np.all(np.diff(state.sigma) <= 0)),
        "sigma_nonnegative": bool(np.all(state.sigma >= 0)),
        "cond_u": state.cond_estimates[0],
        "cond_v": state.cond_estimates[1],
    }


def check_invariants(state: TruncatedSvdState, tol=1e-7, reset_threshold=1e8):
    rep = invariant_report(state)
    return (rep["left_orthonormality"] <= tol and rep["right_orthonormality"] <= tol
            and rep["sigma_sorted"] and rep["sigma_nonnegative"]
            and rep["cond_u"] <= reset_threshold and rep["cond_v"] <= reset_threshold)
