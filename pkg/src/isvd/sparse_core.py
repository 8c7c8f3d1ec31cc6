"""Sparse and small-dense linear algebra primitives.

Sparse matrices are ``scipy.sparse`` CSC matrices in canonical form (sorted
row indices, no duplicates). Tall dense factors are C-ordered float64 numpy
arrays. Everything in here avoids work proportional to the row count of a
tall operand unless the docstring says otherwise; the incremental SVD relies
on that to keep updates proportional to the update's sparsity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .exceptions import NumericError, ShapeError, SingularMatrixError, SvdFailure

DROP_TOL = 0.0
SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sorted (index, value) storage of a vector of length ``dim``.

    Values with magnitude ``<= drop_tol`` are removed at construction, so an
    exact zero is never stored.
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray
    drop_tol: float = field(default=DROP_TOL, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.float64).ravel()
        if idx.shape != val.shape:
            raise ShapeError("indices and values differ in length")
        if self.dim <= 0:
            raise ShapeError("dim must be positive")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0):
                raise ShapeError("indices must be strictly increasing and inside [0, dim)")
        if not np.all(np.isfinite(val)):
            raise NumericError("non-finite value in sparse vector")
        keep = np.abs(val) > self.drop_tol
        if not keep.all():
            idx, val = idx[keep], val[keep]
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dense(cls, x, drop_tol=DROP_TOL):
        x = np.asarray(x, dtype=np.float64).ravel()
        idx = np.flatnonzero(np.abs(x) > drop_tol)
        return cls(x.size, idx, x[idx], drop_tol)

    @classmethod
    def from_column(cls, A, j):
        A = as_csc(A)
        lo, hi = A.indptr[j], A.indptr[j + 1]
        return cls(A.shape[0], A.indices[lo:hi], A.data[lo:hi])

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def nnz(self):
        return int(self.indices.size)

    def to_dense(self):
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, other: "SparseVector") -> float:
        _, ia, ib = np.intersect1d(self.indices, other.indices, assume_unique=True,
                                   return_indices=True)
        return float(self.values[ia] @ other.values[ib])

    def scaled(self, alpha: float) -> "SparseVector":
        return SparseVector(self.dim, self.indices, alpha * self.values, self.drop_tol)

    def __add__(self, other: "SparseVector") -> "SparseVector":
        if self.dim != other.dim:
            raise ShapeError("dimension mismatch")
        idx = np.union1d(self.indices, other.indices)
        val = np.zeros(idx.size)
        val[np.searchsorted(idx, self.indices)] += self.values
        val[np.searchsorted(idx, other.indices)] += other.values
        return SparseVector(self.dim, idx, val, self.drop_tol)


def as_csc(A, shape=None) -> sp.csc_matrix:
    """Return ``A`` as a canonical float64 CSC matrix."""
    if isinstance(A, SparseVector):
        A = sp.csc_matrix((A.values, A.indices, [0, A.nnz]), shape=(A.dim, 1))
    elif not sp.issparse(A):
        A = sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=np.float64)))
    A = sp.csc_matrix(A, dtype=np.float64)
    if not A.has_canonical_format:
        A.sum_duplicates()
    if shape is not None and A.shape != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {A.shape}")
    if not np.all(np.isfinite(A.data)):
        raise NumericError("non-finite entry in sparse matrix")
    return A


def row_support(A: sp.csc_matrix):
    """Gather the nonzero rows of ``A`` into a dense block.

    Returns ``(rows, block)`` where ``rows`` are the sorted distinct row
    indices holding a nonzero and ``block[i, j] == A[rows[i], j]``. Cost is
    O(nnz(A) log nnz(A) + len(rows) * A.shape[1]).
    """
    rows = np.unique(A.indices)
    block = np.zeros((rows.size, A.shape[1]))
    if A.nnz:
        local = np.searchsorted(rows, A.indices)
        cols = np.repeat(np.arange(A.shape[1]), np.diff(A.indptr))
        block[local, cols] = A.data
    return rows, block


def spmv_transpose(M, X: np.ndarray) -> np.ndarray:
    """Compute ``M.T @ X`` reading only the rows of ``X`` where ``M`` is nonzero."""
    M = as_csc(M)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or M.shape[0] != X.shape[0]:
        raise ShapeError(f"shape: {M.shape} vs {X.shape}")
    rows, block = row_support(M)
    return block.T @ X[rows]


def sparse_axpy_block(Y: np.ndarray, B, W: np.ndarray, inplace=False) -> np.ndarray:
    """Return ``Y + B @ W``, touching only rows where ``B`` has a nonzero."""
    B = as_csc(B)
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if Y.shape[0] != B.shape[0] or B.shape[1] != W.shape[0] or W.shape[1] != Y.shape[1]:
        raise ShapeError(f"shape: Y{Y.shape} B{B.shape} W{W.shape}")
    out = Y if inplace else Y.copy()
    rows, block = row_support(B)
    out[rows] += block @ W
    return out


def _sign_fix(F, G):
    # largest-magnitude entry of each left vector made nonnegative
    if F.size == 0:
        return F, G
    pivot = np.abs(F).argmax(axis=0)
    flip = F[pivot, np.arange(F.shape[1])] < 0
    F[:, flip] *= -1
    G[:, flip] *= -1
    return F, G


def small_svd(M, k: int, method: str = "lapack"):
    """Rank-``k`` SVD of a small dense matrix.

    Parameters
    ----------
    M : array_like, shape (p, q)
    k : int
        Number of leading triplets to keep, ``k <= min(p, q)``.
    method : {"lapack", "jacobi"}
        ``"lapack"`` uses divide-and-conquer with a QR-iteration fallback;
        ``"jacobi"`` uses :func:`jacobi_svd`.

    Returns
    -------
    F : ndarray (p, k)
    theta : ndarray (k,)
        Descending, nonnegative.
    G : ndarray (q, k)
        ``M ~= F @ diag(theta) @ G.T``.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError("small_svd expects a 2-d matrix")
    if not 0 < k <= min(M.shape):
        raise ShapeError(f"k={k} out of range for shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("non-finite entry in small_svd input")
    if method == "jacobi":
        F, theta, G = jacobi_svd(M)
        F, G = _complete(F), _complete(G)
    else:
        try:
            F, theta, Gt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd",
                                             check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            try:
                F, theta, Gt = scipy.linalg.svd(M, full_matrices=False,
                                                 lapack_driver="gesvd", check_finite=False)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise SvdFailure(str(exc)) from exc
        G = Gt.T
    F, G = _sign_fix(np.array(F[:, :k]), np.array(G[:, :k]))
    return F, np.array(theta[:k]), G


def _complete(X):
    # replace all-zero columns by an orthonormal completion of the others
    zero = ~X.any(axis=0)
    if zero.any():
        fill = scipy.linalg.null_space(X[:, ~zero].T)
        X = X.copy()
        X[:, zero] = fill[:, : zero.sum()]
    return X


def _round_robin(n):
    # circle-method schedule: n-1 rounds of n/2 disjoint pairs (n even)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(M, tol=1e-15, max_sweeps=80):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Each round rotates ``n/2`` disjoint column pairs at once. Works on the
    transpose when ``M`` is wide. Returns ``(U, s, V)`` with ``s`` sorted
    descending; columns of ``U`` belonging to zero singular values are zero.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] < M.shape[1]:
        V, s, U = jacobi_svd(M.T, tol, max_sweeps)
        return U, s, V
    m, n = M.shape
    npad = n + (n % 2)
    A = np.zeros((m, npad))
    A[:, :n] = M
    V = np.eye(npad)
    rounds = _round_robin(npad) if npad > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = A[:, p], A[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        raise SvdFailure("Jacobi sweeps did not converge")
    sig = np.linalg.norm(A, axis=0)
    order = np.argsort(-sig, kind="stable")[:n]
    sig = sig[order]
    U = np.zeros((m, n))
    nz = sig > 0
    U[:, nz] = A[:, order[nz]] / sig[nz]
    return U, sig, V[:n, order]


def small_inverse(M):
    """Inverse of a small square matrix with its 1-norm condition number.

    Raises :class:`SingularMatrixError` when the condition number exceeds
    1e12 or the factorization breaks down.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"small_inverse expects a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("non-finite entry in small_inverse input")
    try:
        inv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(inv)):
        raise SingularMatrixError("inverse overflowed")
    cond = float(np.linalg.norm(M, 1) * np.linalg.norm(inv, 1))
    if not cond <= SINGULAR_COND:
        raise SingularMatrixError(f"condition estimate {cond:.3g} above {SINGULAR_COND:g}")
    return inv, cond


def dense_mgs(Z, norms=None, rank_tol=1e-7):
    """Modified Gram-Schmidt QR of a dense matrix.

    A column whose residual norm falls to ``rank_tol * norms[j]`` or below is
    zeroed and its row of ``R`` left at zero, so the output keeps the input's
    column count. ``norms`` defaults to the input column norms.
    """
    Q = np.array(Z, dtype=np.float64, order="F")
    s = Q.shape[1]
    if norms is None:
        norms = np.linalg.norm(Q, axis=0)
    R = np.zeros((s, s))
    for i in range(s):
        alpha = np.linalg.norm(Q[:, i])
        if alpha == 0.0 or alpha <= rank_tol * norms[i]:
            Q[:, i] = 0.0
            continue
        R[i, i] = alpha
        Q[:, i] /= alpha
        if i + 1 < s:
            beta = Q[:, i] @ Q[:, i + 1:]
            R[i, i + 1:] = beta
            Q[:, i + 1:] -= np.outer(Q[:, i], beta)
    return Q, R


def orthonormality_error(X) -> float:
    """Max-abs deviation of ``X.T @ X`` from the identity."""
    X = np.asarray(X)
    return float(np.abs(X.T @ X - np.eye(X.shape[1])).max()) if X.shape[1] else 0.0


def read_matrix_market(path) -> sp.csc_matrix:
    A = scipy.io.mmread(path)
    return as_csc(A)


def write_matrix_market(path, A, comment=""):
    scipy.io.mmwrite(path, sp.coo_matrix(as_csc(A)), comment=comment, precision=17)
