import numpy as np
import pytest
import scipy.sparse as sp

from isvd import baselines as bl
from isvd import engine
from isvd.engine import RowBuffer, TruncatedSvdState, UpdateBatch, VariantConfig
from isvd.exceptions import (BadSigma, NotOrthonormal, OutOfBounds, ShapeError, SvdFailure,
                             TooLarge)
from isvd.sparse_core import orthonormality_error
from isvd.timing import StepTimer

from .helpers import best_rank_k, orthonormal, rel, sparse


def state_from(A, k):
    T = bl.direct_truncated_svd(A, k)
    return engine.init(T.U, T.sigma, T.V), T


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestInit:
    def test_identity_top(self):
        st = engine.init(np.eye(3)[:, :2], [3.0, 2.0], np.eye(3)[:, :2])
        expected = np.zeros((3, 3))
        expected[0, 0], expected[1, 1] = 3, 2
        np.testing.assert_array_equal(engine.reconstruct(st), expected)
        np.testing.assert_array_equal(st.u_dd, np.eye(2))

    def test_rank_one(self, rng):
        u = orthonormal(rng, 5, 1)
        v = orthonormal(rng, 4, 1)
        st = engine.init(u, [2.5], v)
        np.testing.assert_allclose(engine.reconstruct(st), 2.5 * u @ v.T)

    def test_from_random_sparse(self, rng):
        A = sparse(rng, 40, 30, 0.2)
        st, _ = state_from(A, 6)
        _, best = best_rank_k(A.toarray(), 6)
        assert rel(engine.reconstruct(st), best) < 1e-12

    def test_errors(self, rng):
        U = orthonormal(rng, 5, 2)
        with pytest.raises(NotOrthonormal):
            engine.init(2 * U, [2, 1], U)
        with pytest.raises(BadSigma):
            engine.init(U, [1, 2], U)
        with pytest.raises(BadSigma):
            engine.init(U, [1, -1], U)
        with pytest.raises(ShapeError):
            engine.init(U, [1.0], U)


class TestAddColumns:
    def test_zero_column(self, rng):
        st, T = state_from(sparse(rng, 20, 15, 0.3), 4)
        sigma = st.sigma.copy()
        engine.add_columns(st, sp.csc_matrix((20, 1)))
        np.testing.assert_allclose(st.sigma, sigma, atol=1e-13)
        assert st.n == 16
        row, _ = engine.query_right(st, 15)
        np.testing.assert_allclose(row, 0, atol=1e-14)

    def test_e3_append(self):
        U = np.eye(3)[:, :2]
        st = engine.init(U, [3.0, 2.0], np.eye(2))
        engine.add_columns(st, sp.csc_matrix(np.array([[0.0], [0.0], [1.0]])))
        np.testing.assert_allclose(st.sigma, [3, 2])
        full = np.diag([3.0, 2.0, 1.0])
        F, theta, G = bl.small_svd(full, 2)
        np.testing.assert_allclose(engine.reconstruct(st), (F * theta) @ G.T, atol=1e-14)

    def test_random_matches_oracle(self, rng):
        A = sparse(rng, 80, 60, 0.1)
        st, T = state_from(A, 8)
        E = sparse(rng, 80, 5, 0.1)
        engine.add_columns(st, E)
        R = bl.zha_simon_add_columns(T, E)
        np.testing.assert_allclose(st.sigma, R.sigma, atol=1e-8 * R.sigma[0])
        assert rel(engine.reconstruct(st), R.reconstruct()) < 1e-8
        sig, best = best_rank_k(np.hstack([T.reconstruct(), E.toarray()]), 8)
        np.testing.assert_allclose(st.sigma, sig, atol=1e-10)

    def test_shape_error(self, rng):
        st, _ = state_from(sparse(rng, 20, 15, 0.3), 3)
        with pytest.raises(ShapeError):
            engine.add_columns(st, sp.csc_matrix((19, 2)))


class TestAddRows:
    def test_zero_row(self, rng):
        st, _ = state_from(sparse(rng, 20, 15, 0.3), 4)
        sigma = st.sigma.copy()
        engine.add_rows(st, sp.csc_matrix((1, 15)))
        np.testing.assert_allclose(st.sigma, sigma, atol=1e-13)
        assert st.m == 21 and st.n == 15
        np.testing.assert_allclose(engine.query_left(st, 20)[0], 0, atol=1e-14)

    def test_transpose_symmetry(self, rng):
        A = sparse(rng, 30, 25, 0.2)
        st, _ = state_from(A, 5)
        stT = st.transpose()
        E = sparse(rng, 4, 25, 0.2)
        engine.add_rows(st, E)
        engine.add_columns(stT, E.T)
        np.testing.assert_allclose(st.sigma, stT.sigma, atol=1e-13)
        np.testing.assert_allclose(engine.reconstruct(st), engine.reconstruct(stT).T, atol=1e-12)

    def test_random_matches_oracle(self, rng):
        A = sparse(rng, 60, 80, 0.1)
        st, T = state_from(A, 8)
        E = sparse(rng, 5, 80, 0.1)
        engine.add_rows(st, E)
        R = bl.zha_simon_add_rows(T, E)
        np.testing.assert_allclose(st.sigma, R.sigma, atol=1e-8 * R.sigma[0])
        assert rel(engine.reconstruct(st), R.reconstruct()) < 1e-8
        np.testing.assert_allclose(engine.query_left(st, st.m - 1)[0], R.U[-1], atol=1e-12)


class TestUpdateWeights:
    def test_zero_d(self, rng):
        st, _ = state_from(sparse(rng, 30, 20, 0.2), 5)
        before = engine.reconstruct(st)
        engine.update_weights(st, sp.csc_matrix((30, 2)), sparse(rng, 20, 2, 0.3))
        np.testing.assert_allclose(engine.reconstruct(st), before, atol=1e-12)

    def test_cancel_last_triplet(self, rng):
        st, T = state_from(sparse(rng, 40, 30, 0.2), 5)
        D = -T.sigma[-1] * T.U[:, -1:]
        E = T.V[:, -1:]
        engine.update_weights(st, D, E)
        assert st.sigma[-1] < 1e-12 * st.sigma[0]
        dense = T.reconstruct() + D @ E.T
        sig, _ = best_rank_k(dense, 5)
        np.testing.assert_allclose(st.sigma, sig, atol=1e-12)

    def test_random_matches_oracle(self, rng):
        st, T = state_from(sparse(rng, 80, 60, 0.1), 8)
        D, E = sparse(rng, 80, 4, 0.05), sparse(rng, 60, 4, 0.05)
        engine.update_weights(st, D, E)
        R = bl.zha_simon_update_weights(T, D, E)
        np.testing.assert_allclose(st.sigma, R.sigma, atol=1e-8 * R.sigma[0])
        assert rel(engine.reconstruct(st), R.reconstruct()) < 1e-8

    def test_shape_error(self, rng):
        st, _ = state_from(sparse(rng, 20, 15, 0.3), 3)
        with pytest.raises(ShapeError):
            engine.update_weights(st, sp.csc_matrix((20, 2)), sp.csc_matrix((15, 3)))


@pytest.mark.parametrize("mode", ["gkl", "rpi"])
def test_approximate_modes_match_dense(rng, mode):
    st, T = state_from(sparse(rng, 70, 50, 0.1), 6)
    E = sparse(rng, 70, 25, 0.1)
    engine.add_columns(st, E, VariantConfig(mode=mode, l=8, seed=5))
    R = bl.zha_simon_add_columns(T, E, mode=mode, l=8, seed=5)
    np.testing.assert_allclose(st.sigma, R.sigma, atol=1e-8 * R.sigma[0])
    assert rel(engine.reconstruct(st), R.reconstruct()) < 1e-8


def test_query(rng):
    st, _ = state_from(sparse(rng, 30, 20, 0.2), 4)
    np.testing.assert_array_equal(engine.query_left(st, 3)[0], st.u_prime[3])
    engine.add_columns(st, sparse(rng, 30, 3, 0.2))
    engine.update_weights(st, sparse(rng, 30, 2, 0.2), sparse(rng, 23, 2, 0.2))
    U, V = st.left_vectors(), st.right_vectors()
    for i in range(st.m):
        np.testing.assert_allclose(engine.query_left(st, i)[0], U[i], rtol=1e-12, atol=1e-15)
    for j in range(st.n):
        np.testing.assert_allclose(engine.query_right(st, j)[0], V[j], rtol=1e-12, atol=1e-15)
    with pytest.raises(OutOfBounds):
        engine.query_left(st, st.m)
    with pytest.raises(OutOfBounds):
        engine.query_right(st, -1)


def test_reconstruct_cap(rng):
    st, _ = state_from(sparse(rng, 30, 20, 0.2), 2)
    with pytest.raises(TooLarge):
        engine.reconstruct(st, cap=100)


class TestHealthReset:
    def test_identity_noop(self, rng):
        st, _ = state_from(sparse(rng, 30, 20, 0.2), 4)
        before = engine.reconstruct(st)
        engine.health_reset(st)
        np.testing.assert_allclose(engine.reconstruct(st), before, atol=1e-12)
        np.testing.assert_allclose(np.abs(st.left_vectors().T @ st.u_prime), np.eye(4),
                                   atol=1e-12)

    def test_injected_ill_conditioning(self, rng):
        U, V = orthonormal(rng, 30, 2), orthonormal(rng, 20, 2)
        dd = np.diag([1.0, 1e-9])
        st = TruncatedSvdState(U @ np.linalg.inv(dd), dd, [5.0, 1.0], np.eye(2), V)
        before = engine.reconstruct(st)
        engine.health_reset(st)
        assert np.linalg.cond(st.u_dd, 1) < 10 and max(st.cond_estimates) < 10
        assert rel(engine.reconstruct(st), before) < 1e-9
        assert st.reset_count == 1

    def test_automatic_fold(self, rng):
        # a dominant new triplet orthogonal to both factors pushes the last
        # old direction out, so the new small factor is exactly singular and
        # the update has to fold instead of inverting it
        A = sparse(rng, 40, 30, 0.2).tolil()
        A[39, :] = 0
        A[:, 29] = 0
        st, T = state_from(A.tocsc(), 3)
        D = sp.csc_matrix(([100.0 * T.sigma[0]], ([39], [0])), shape=(40, 1))
        E = sp.csc_matrix(([1.0], ([29], [0])), shape=(30, 1))
        engine.update_weights(st, D, E, VariantConfig(reset_threshold=1e8))
        assert st.reset_count == 2  # both sides fold
        R = bl.zha_simon_update_weights(T, D, E)
        assert rel(engine.reconstruct(st), R.reconstruct()) < 1e-8
        assert engine.check_invariants(st)
        np.testing.assert_array_equal(st.u_dd, np.eye(3))


def test_transactional_on_svd_failure(rng, monkeypatch):
    st, _ = state_from(sparse(rng, 30, 20, 0.2), 4)
    snapshot = st.copy()

    def boom(*a, **k):
        raise SvdFailure("forced")

    monkeypatch.setattr(engine, "small_svd", boom)
    for call in (lambda: engine.add_columns(st, sparse(rng, 30, 2, 0.3)),
                 lambda: engine.add_rows(st, sparse(rng, 2, 20, 0.3)),
                 lambda: engine.update_weights(st, sparse(rng, 30, 1, 0.3),
                                               sparse(rng, 20, 1, 0.3))):
        with pytest.raises(SvdFailure):
            call()
        assert (st.m, st.n, st.update_count) == (snapshot.m, snapshot.n, snapshot.update_count)
        np.testing.assert_array_equal(st.u_prime, snapshot.u_prime)
        np.testing.assert_array_equal(st.v_prime, snapshot.v_prime)
        np.testing.assert_array_equal(st.sigma, snapshot.sigma)


def test_dimension_bookkeeping_and_empty_batches(rng):
    st, _ = state_from(sparse(rng, 30, 20, 0.2), 4)
    engine.add_rows(st, sparse(rng, 3, 20, 0.3))
    assert (st.m, st.n) == (33, 20)
    engine.add_columns(st, sparse(rng, 33, 2, 0.3))
    assert (st.m, st.n) == (33, 22)
    before = engine.reconstruct(st)
    for batch in (UpdateBatch("add_rows", sp.csc_matrix((0, 22))),
                  UpdateBatch("add_columns", sp.csc_matrix((33, 0))),
                  UpdateBatch("update_weights", sp.csc_matrix((22, 0)), sp.csc_matrix((33, 0)))):
        engine.apply_batch(st, batch)
    assert st.update_count == 5
    np.testing.assert_array_equal(engine.reconstruct(st), before)


def test_invariants_after_many_updates(rng):
    st, _ = state_from(sparse(rng, 50, 40, 0.1), 6)
    for i in range(30):
        op = i % 3
        if op == 0:
            engine.add_columns(st, sparse(rng, st.m, 2, 0.1))
        elif op == 1:
            engine.add_rows(st, sparse(rng, 2, st.n, 0.1))
        else:
            engine.update_weights(st, sparse(rng, st.m, 1, 0.1), sparse(rng, st.n, 1, 0.1))
        assert orthonormality_error(st.left_vectors()) < 1e-7
        assert orthonormality_error(st.right_vectors()) < 1e-7
        assert np.all(np.diff(st.sigma) <= 0) and np.all(st.sigma >= 0)


def test_row_buffer_growth():
    buf = RowBuffer(np.zeros((2, 3)))
    for i in range(40):
        buf.append(np.full((1, 3), i))
    assert len(buf) == 42 and buf.view.shape == (42, 3)
    assert buf.view[-1, 0] == 39
    assert buf._data.shape[0] < 2 * 42 + 16


def test_timer_laps_sum(rng):
    st, _ = state_from(sparse(rng, 30, 20, 0.2), 4)
    t = StepTimer()
    engine.add_columns(st, sparse(rng, 30, 3, 0.2), timer=t)
    assert all(v >= 0 for v in t.totals.values())
    assert t.total == pytest.approx(sum(t.totals.values()))
    assert t.totals["svd"] > 0


def test_variant_config_validation():
    with pytest.raises(ValueError):
        VariantConfig(mode="qr")
    with pytest.raises(ValueError):
        VariantConfig(l=0)
    with pytest.raises(ValueError):
        VariantConfig(reset_threshold=1.0)
    with pytest.raises(ValueError):
        UpdateBatch("add_rows", sp.csc_matrix((1, 1)), sp.csc_matrix((1, 1)))
