"""Sparse-vector-minus-linear-combination (SV-LCOV) arithmetic.

A vector ``z = (I - U U^T) b`` with sparse ``b`` and orthonormal ``U`` is held
as the pair ``(b, c)`` with ``c = U^T b``. Scaling, addition and inner products
act on the pair directly::

    <(b1, c1), (b2, c2)> = <b1, b2> - <c1, c2>

so orthogonalising a batch of such vectors never touches rows outside the
union of the ``b`` supports. The batched routines here (``qr``, ``gkl_basis``,
``rpi_basis``) store every ``b`` of a batch densely on that shared support,
which is where all of their ``b`` vectors live.

Precision note: a norm computed as ``sqrt(<b,b> - <c,c>)`` is accurate to
roughly ``sqrt(eps) * ||b||`` in absolute terms, so vectors whose projected
length is below ``RANK_TOL * ||b||`` are treated as numerically zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BasisMismatch, NumericError, ShapeError
from .sparse_core import SparseVector, as_csc, dense_mgs, row_support

RANK_TOL = 1e-7
BREAKDOWN_TOL = 1e-12
REORTH_TOL = 1e-8


class Basis:
    """Handle on an orthonormal ``m x k`` basis stored as ``prime @ dd``.

    Two handles are the same basis when they wrap the very same arrays.
    """

    def __init__(self, prime, dd=None):
        self.prime = prime if isinstance(prime, np.ndarray) else np.asarray(prime, dtype=np.float64)
        if self.prime.ndim != 2:
            raise ShapeError("basis must be a 2-d array")
        self.dd = dd

    @property
    def rows(self):
        return self.prime.shape[0]

    @property
    def k(self):
        return self.prime.shape[1] if self.dd is None else self.dd.shape[1]

    def coefficients(self, rows, block):
        """``U^T B`` for ``B`` given by its nonzero ``rows`` and dense ``block``."""
        c = self.prime[rows].T @ block
        return c if self.dd is None else self.dd.T @ c

    def dense(self):
        return self.prime if self.dd is None else self.prime @ self.dd

    def same_as(self, other: "Basis") -> bool:
        return self.prime is other.prime and self.dd is other.dd


def as_basis(U) -> Basis:
    return U if isinstance(U, Basis) else Basis(U)


@dataclass(frozen=True)
class SvLcov:
    """The pair ``(b, c)`` standing for ``b - U c`` with ``c = U^T b``."""

    b: SparseVector
    c: np.ndarray
    basis: Basis

    def materialize(self):
        return self.b.to_dense() - self.basis.dense() @ self.c

    def norm(self):
        return np.sqrt(dot(self, self))


def lift(b, U) -> SvLcov:
    """Pair a sparse vector with its coefficients ``U^T b``; O(k nnz(b))."""
    basis = as_basis(U)
    if not isinstance(b, SparseVector):
        b = SparseVector.from_dense(b)
    if b.dim != basis.rows:
        raise ShapeError(f"shape: vector of length {b.dim} vs basis with {basis.rows} rows")
    c = basis.coefficients(b.indices, b.values[:, None])[:, 0]
    return SvLcov(b, c, basis)


def scale(x: SvLcov, alpha: float) -> SvLcov:
    if not np.isfinite(alpha):
        raise NumericError("scale factor must be finite")
    return SvLcov(x.b.scaled(alpha), alpha * x.c, x.basis)


def _check_same(x, y):
    if not x.basis.same_as(y.basis):
        raise BasisMismatch("SV-LCOV operands are bound to different bases")


def add(x: SvLcov, y: SvLcov) -> SvLcov:
    _check_same(x, y)
    return SvLcov(x.b + y.b, x.c + y.c, x.basis)


def dot(x: SvLcov, y: SvLcov) -> float:
    _check_same(x, y)
    val = x.b.dot(y.b) - float(x.c @ y.c)
    if x is y and -1e-12 <= val < 0.0:
        val = 0.0
    return val


@dataclass
class _Block:
    """Several SV-LCOV vectors sharing one row support.

    Column ``j`` is the pair ``(b_j, c[:, j])`` where ``b_j`` is zero outside
    ``rows`` and equals ``b[:, j]`` on them.
    """

    basis: Basis
    rows: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def size(self):
        return self.b.shape[1]

    @property
    def vectors(self):
        out = []
        for j in range(self.size):
            sv = SparseVector(self.basis.rows, self.rows, self.b[:, j])
            out.append(SvLcov(sv, self.c[:, j].copy(), self.basis))
        return out

    def materialize(self):
        Z = np.zeros((self.basis.rows, self.size))
        Z[self.rows] = self.b
        return Z - self.basis.dense() @ self.c

    def gram(self):
        return self.b.T @ self.b - self.c.T @ self.c


@dataclass
class SvLcovBasis(_Block):
    """Output of :func:`qr`: orthonormal pairs and the triangular factor ``r``.

    ``proj`` keeps ``U^T E`` of the input, which the SVD update needs.
    Rank-deficient columns are all-zero and their row of ``r`` is zero.
    """

    r: np.ndarray = None
    proj: np.ndarray = None

    @property
    def kept(self):
        return np.diag(self.r) > 0


@dataclass
class ApproxBasis(_Block):
    """Output of :func:`gkl_basis` / :func:`rpi_basis`.

    ``p`` is ``s x l`` with ``Z ~= Q @ p.T`` for the augmented matrix ``Z``.
    """

    p: np.ndarray = None
    proj: np.ndarray = None


def _mgs_pairs(B, C, norms, rank_tol):
    # Modified Gram-Schmidt under <(b1,c1),(b2,c2)> = <b1,b2> - <c1,c2>;
    # the inner loop over j > i is done as one block update.
    s = B.shape[1]
    R = np.zeros((s, s))
    for i in range(s):
        bi, ci = B[:, i], C[:, i]
        rad = bi @ bi - ci @ ci
        alpha = np.sqrt(rad) if rad > 0.0 else 0.0
        if alpha == 0.0 or alpha <= rank_tol * norms[i]:
            B[:, i] = 0.0
            C[:, i] = 0.0
            continue
        R[i, i] = alpha
        bi /= alpha
        ci /= alpha
        if i + 1 < s:
            beta = bi @ B[:, i + 1:] - ci @ C[:, i + 1:]
            R[i, i + 1:] = beta
            B[:, i + 1:] -= np.outer(bi, beta)
            C[:, i + 1:] -= np.outer(ci, beta)
    return B, C, R


def _orthonormalize_pairs(B, C, norms, rank_tol, reorth_tol):
    B = np.asfortranarray(B)
    C = np.asfortranarray(C)
    B, C, R = _mgs_pairs(B, C, norms, rank_tol)
    if B.shape[1] > 1:
        G = B.T @ B - C.T @ C
        np.fill_diagonal(G, 0.0)
        if np.abs(G).max() > reorth_tol:
            B, C, R2 = _mgs_pairs(B, C, np.ones(B.shape[1]), rank_tol)
            R = R2 @ R
    return B, C, R


def _prepare(E, U):
    basis = as_basis(U)
    E = as_csc(E)
    if E.shape[0] != basis.rows:
        raise ShapeError(f"shape: update has {E.shape[0]} rows, basis has {basis.rows}")
    rows, B = row_support(E)
    C = basis.coefficients(rows, B)
    return basis, rows, B, C


def qr(E, U, rank_tol=RANK_TOL, reorth_tol=REORTH_TOL) -> SvLcovBasis:
    """Orthonormalise the columns of ``(I - U U^T) E`` without forming them.

    Parameters
    ----------
    E : sparse matrix, shape (m, s)
    U : ndarray (m, k) or Basis
        Orthonormal columns.
    rank_tol : float
        A column whose remaining length is at most ``rank_tol`` times the
        norm of the corresponding column of ``E`` is zeroed.
    reorth_tol : float
        A second Gram-Schmidt sweep runs when an off-diagonal entry of the
        Gram matrix exceeds this.

    Returns
    -------
    SvLcovBasis
        ``Q`` as pairs on the support of ``E``, upper-triangular ``r`` with
        nonnegative diagonal, and ``proj = U^T E``.

    Cost is O((nnz-rows(E) + k) s^2 + nnz(E) k).
    """
    basis, rows, B, C = _prepare(E, U)
    proj = C.copy()
    norms = np.linalg.norm(B, axis=0)
    B, C, R = _orthonormalize_pairs(B, C, norms, rank_tol, reorth_tol)
    return SvLcovBasis(basis, rows, B, C, r=R, proj=proj)


def initial_vector(s, seed):
    """Seeded unit vector in R^s used to start the Lanczos recurrence."""
    p = np.random.default_rng(seed).standard_normal(s)
    return p / np.linalg.norm(p)


def initial_block(s, l, seed):
    """Seeded ``s x l`` matrix with orthonormal columns for power iteration."""
    P = np.random.default_rng(seed).standard_normal((s, l))
    return orthonormal_columns(P)


def orthonormal_columns(P, rank_tol=RANK_TOL):
    """Orthonormal basis of range(P) by MGS, dropping dependent columns."""
    Q, R = dense_mgs(P, rank_tol=rank_tol)
    return Q[:, np.diag(R) > 0]


def gkl_basis(E, U, l, seed=0, rank_tol=RANK_TOL, breakdown_tol=BREAKDOWN_TOL) -> ApproxBasis:
    """Golub-Kahan-Lanczos basis of the augmented matrix in pair form.

    Runs ``l`` bidiagonalisation steps on ``Z = (I - U U^T) E`` from a seeded
    start vector, with full reorthogonalisation of the right Lanczos vectors.
    Stops early when ``alpha_i <= rank_tol * ||E||_F`` or
    ``beta_i <= breakdown_tol * ||E||_F``.
    """
    basis, rows, B, C = _prepare(E, U)
    s = B.shape[1]
    if not 1 <= l <= s:
        raise ShapeError(f"need 1 <= l <= {s}, got l={l}")
    proj = C.copy()
    scale_ = np.sqrt((B * B).sum())
    Qb = np.zeros((rows.size, l))
    Qc = np.zeros((C.shape[0], l))
    ps = [initial_vector(s, seed)]
    alphas, betas = [], []
    beta_prev = 0.0
    for i in range(l):
        b = B @ ps[i]
        c = C @ ps[i]
        if i:
            b -= beta_prev * Qb[:, i - 1]
            c -= beta_prev * Qc[:, i - 1]
        rad = b @ b - c @ c
        alpha = np.sqrt(rad) if rad > 0.0 else 0.0
        if alpha == 0.0 or alpha <= rank_tol * scale_:
            break
        Qb[:, i] = b / alpha
        Qc[:, i] = c / alpha
        alphas.append(alpha)
        pn = B.T @ Qb[:, i] - C.T @ Qc[:, i] - alpha * ps[i]
        Pm = np.column_stack(ps)
        for _ in range(2):
            pn -= Pm @ (Pm.T @ pn)
        beta = np.linalg.norm(pn)
        if beta <= breakdown_tol * scale_:
            betas.append(0.0)
            ps.append(np.zeros(s))
            break
        ps.append(pn / beta)
        betas.append(beta)
        beta_prev = beta
    j = len(alphas)
    P = _bidiagonal_product(ps, alphas, betas, s)
    return ApproxBasis(basis, rows, Qb[:, :j], Qc[:, :j], p=P, proj=proj)


def _bidiagonal_product(ps, alphas, betas, s):
    # P = P_{j+1} H^T with H = diag(alpha) + superdiag(beta), H of size j x (j+1)
    j = len(alphas)
    if j == 0:
        return np.zeros((s, 0))
    H = np.zeros((j, j + 1))
    H[np.arange(j), np.arange(j)] = alphas
    H[np.arange(j), np.arange(1, j + 1)] = betas[:j]
    return np.column_stack(ps[: j + 1]) @ H.T


def rpi_basis(E, U, l, t=3, seed=0, rank_tol=RANK_TOL, reorth_tol=REORTH_TOL) -> ApproxBasis:
    """Randomized power-iteration basis of the augmented matrix in pair form.

    Each of the ``t`` rounds orthonormalises ``P``, forms ``Z P`` as pairs,
    orthonormalises those with :func:`qr`'s Gram-Schmidt process and sets
    ``P = Z^T Q``. Dependent directions are dropped, so the basis may end up
    with fewer than ``l`` vectors.
    """
    basis, rows, B, C = _prepare(E, U)
    s = B.shape[1]
    if not 1 <= l <= s:
        raise ShapeError(f"need 1 <= l <= {s}, got l={l}")
    if t < 1:
        raise ShapeError("t must be >= 1")
    proj = C.copy()
    P = initial_block(s, l, seed)
    Qb = np.zeros((rows.size, 0))
    Qc = np.zeros((C.shape[0], 0))
    for _ in range(t):
        P = orthonormal_columns(P, rank_tol)
        if P.shape[1] == 0:
            break
        Qb = B @ P
        Qc = C @ P
        norms = np.linalg.norm(Qb, axis=0)
        Qb, Qc, R = _orthonormalize_pairs(Qb, Qc, norms, rank_tol, reorth_tol)
        keep = np.diag(R) > 0
        Qb, Qc = Qb[:, keep], Qc[:, keep]
        P = B.T @ Qb - C.T @ Qc
    if P.shape[1] != Qb.shape[1]:
        P = np.zeros((s, 0))
        Qb = np.zeros((rows.size, 0))
        Qc = np.zeros((C.shape[0], 0))
    return ApproxBasis(basis, rows, np.ascontiguousarray(Qb), np.ascontiguousarray(Qc),
                       p=P, proj=proj)
