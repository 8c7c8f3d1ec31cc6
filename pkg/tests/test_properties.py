"""Property tests: invariants that must hold for every generated input."""

import numpy as np
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from isvd import baselines as bl
from isvd import engine, persistence
from isvd.engine import VariantConfig
from isvd.sparse_core import (SparseVector, orthonormality_error, small_inverse, small_svd,
                              sparse_axpy_block, spmv_transpose)
from isvd.sv_lcov import Basis, dot, gkl_basis, lift, qr, rpi_basis

from .helpers import orthonormal, rel, sparse

seeds = st.integers(0, 2**32 - 1)
FAST = settings(max_examples=60, deadline=None)


def sparse_vec(rng, m):
    nnz = int(rng.integers(0, m + 1))
    idx = np.sort(rng.choice(m, nnz, replace=False))
    return SparseVector(m, idx, rng.standard_normal(nnz))


@FAST
@given(seeds, st.integers(2, 60), st.integers(1, 10))
def test_isometry(seed, m, k):
    rng = np.random.default_rng(seed)
    k = min(k, m)
    U = Basis(orthonormal(rng, m, k))
    b1, b2 = sparse_vec(rng, m), sparse_vec(rng, m)
    P = np.eye(m) - U.prime @ U.prime.T
    expected = (P @ b1.to_dense()) @ (P @ b2.to_dense())
    scale = np.linalg.norm(b1.values) * np.linalg.norm(b2.values)
    assert abs(dot(lift(b1, U), lift(b2, U)) - expected) <= 1e-10 * max(scale, 1e-300)


@FAST
@given(seeds, st.integers(1, 50), st.integers(1, 6), st.floats(0.0, 1.0))
def test_sparse_ops_match_dense(seed, m, s, density):
    rng = np.random.default_rng(seed)
    B = sparse(rng, m, s, density)
    X = rng.standard_normal((m, 4))
    np.testing.assert_allclose(spmv_transpose(B, X), B.toarray().T @ X, atol=1e-12)
    Y = rng.standard_normal((m, 3))
    W = rng.standard_normal((s, 3))
    ref = Y + B.toarray() @ W
    assert rel(sparse_axpy_block(Y, B, W), ref) <= 1e-10


@FAST
@given(seeds, st.integers(1, 15), st.integers(1, 15))
def test_small_svd_permutation_invariant(seed, p, q):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((p, q))
    k = min(p, q)
    _, s1, _ = small_svd(M, k)
    _, s2, _ = small_svd(M[rng.permutation(p)][:, rng.permutation(q)], k)
    np.testing.assert_allclose(s1, s2, atol=1e-10 * max(s1[0], 1))
    _, s3, _ = small_svd(M, k, method="jacobi")
    np.testing.assert_allclose(s1, s3, atol=1e-10 * max(s1[0], 1))


@FAST
@given(seeds, st.integers(1, 12))
def test_small_inverse_both_sides(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) + n * np.eye(n)
    inv, cond = small_inverse(M)
    tol = 1e-8 * cond
    assert np.abs(inv @ M - np.eye(n)).max() <= tol
    assert np.abs(M @ inv - np.eye(n)).max() <= tol


@FAST
@given(seeds, st.integers(10, 120), st.integers(1, 10), st.integers(1, 8),
       st.floats(0.02, 0.5))
def test_qr_properties(seed, m, k, s, density):
    rng = np.random.default_rng(seed)
    k = min(k, m - 1)
    U = orthonormal(rng, m, k)
    E = sparse(rng, m, s, density)
    q = qr(E, U)
    keep = q.kept
    G = q.gram()
    np.testing.assert_allclose(G[np.ix_(keep, keep)], np.eye(keep.sum()), atol=1e-9)
    assert orthonormality_error(np.hstack([U, q.materialize()[:, keep]])) <= 1e-8
    assert np.all(np.isin(q.rows, E.indices))
    Z = E.toarray() - U @ (U.T @ E.toarray())
    assert np.linalg.norm(q.materialize() @ q.r - Z) <= 1e-9 * max(np.linalg.norm(E.toarray()),
                                                                    1e-300) + 1e-300


@FAST
@given(seeds, st.integers(20, 100), st.integers(1, 6), st.integers(2, 20),
       st.integers(1, 10), st.sampled_from(["gkl", "rpi"]))
def test_approx_bases_orthonormal(seed, m, k, s, l, mode):
    rng = np.random.default_rng(seed)
    U = orthonormal(rng, m, k)
    E = sparse(rng, m, s, 0.1)
    l = min(l, s)
    a = gkl_basis(E, U, l, seed) if mode == "gkl" else rpi_basis(E, U, l, 2, seed)
    np.testing.assert_allclose(a.gram(), np.eye(a.size), atol=1e-8)
    assert a.size <= l


def _random_state(rng, m, n, k):
    T = bl.direct_truncated_svd(sparse(rng, m, n, 0.15), k)
    return engine.init(T.U, T.sigma, T.V), T


@settings(max_examples=40, deadline=None)
@given(seeds, st.lists(st.sampled_from(["rows", "cols", "weights"]), min_size=1, max_size=5),
       st.sampled_from(["exact", "gkl", "rpi"]))
def test_engine_invariants_and_oracle(seed, ops, mode):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(15, 60)), int(rng.integers(15, 60))
    k = int(rng.integers(1, 6))
    state, T = _random_state(rng, m, n, k)
    cfg = VariantConfig(mode=mode, l=4, seed=seed % 1000)
    kw = dict(mode=mode, l=4, seed=seed % 1000)
    for op in ops:
        s = int(rng.integers(1, 6))
        m0, n0 = state.m, state.n
        if op == "rows":
            E = sparse(rng, s, state.n, 0.2)
            engine.add_rows(state, E, cfg)
            T = bl.zha_simon_add_rows(T, E, **kw)
            assert (state.m, state.n) == (m0 + s, n0)
        elif op == "cols":
            E = sparse(rng, state.m, s, 0.2)
            engine.add_columns(state, E, cfg)
            T = bl.zha_simon_add_columns(T, E, **kw)
            assert (state.m, state.n) == (m0, n0 + s)
        else:
            D, E = sparse(rng, state.m, s, 0.2), sparse(rng, state.n, s, 0.2)
            engine.update_weights(state, D, E, cfg)
            T = bl.zha_simon_update_weights(T, D, E, **kw)
        assert engine.check_invariants(state)
        # sync the oracle with the engine to compare single steps only
        np.testing.assert_allclose(state.sigma, T.sigma, atol=1e-8 * max(T.sigma[0], 1e-300))
        assert rel(engine.reconstruct(state), T.reconstruct()) <= 1e-8
        T = bl.DenseSvdTriple(state.left_vectors(), state.sigma.copy(), state.right_vectors())
    U = state.left_vectors()
    for i in range(state.m):
        np.testing.assert_allclose(engine.query_left(state, i)[0], U[i], rtol=1e-12,
                                   atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_persistence_round_trip(seed):
    rng = np.random.default_rng(seed)
    state, _ = _random_state(rng, 20, 15, 3)
    engine.add_columns(state, sparse(rng, 20, 2, 0.3))
    data = persistence.dumps(state)
    assert persistence.dumps(persistence.loads(data)) == data


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(1e-6, 1e6))
def test_health_reset_preserves_matrix(seed, scale):
    rng = np.random.default_rng(seed)
    state, _ = _random_state(rng, 25, 20, 4)
    engine.update_weights(state, scale * sparse(rng, 25, 2, 0.3), sparse(rng, 20, 2, 0.3))
    before = engine.reconstruct(state)
    engine.health_reset(state)
    assert rel(engine.reconstruct(state), before) <= 1e-9
    assert np.allclose(state.u_dd, np.eye(4)) and engine.check_invariants(state)
