import numpy as np
import scipy.sparse as sp


def orthonormal(rng, m, k):
    Q, _ = np.linalg.qr(rng.standard_normal((m, k)))
    return Q


def sparse(rng, m, n, density):
    A = sp.random(m, n, density=density, format="csc", random_state=rng,
                  data_rvs=rng.standard_normal)
    return A


def projector_distance(X, Y):
    """Frobenius distance between orthogonal projectors onto range(X), range(Y)."""
    return np.linalg.norm(X @ X.T - Y @ Y.T)


def best_rank_k(M, k):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return s[:k], (U[:, :k] * s[:k]) @ Vt[:k]


def rel(a, b):
    nb = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (nb if nb > 0 else 1.0)
