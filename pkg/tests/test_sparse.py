import time

import numpy as np
import pytest
import scipy.sparse as sp

import laplgm as lg
from laplgm.errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    SingularConstraint,
)


def random_spd(n, rng, density=0.15):
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    return B @ B.T + n * np.eye(n)


def symbolic_fill(Qd, order):
    """Independent fill-count oracle: simulate elimination on sets."""
    n = Qd.shape[0]
    inv = np.argsort(order)
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i):
            if Qd[order[i], order[j]] != 0:
                adj[i].add(j)
                adj[j].add(i)
    fill = 0
    alive = [set(a) for a in adj]
    for v in range(n):
        nbrs = {u for u in alive[v] if u > v}
        for a in nbrs:
            for b in nbrs:
                if a < b and b not in alive[a]:
                    alive[a].add(b)
                    alive[b].add(a)
                    fill += 1
    return fill


def arrow_matrix(n):
    rows = list(range(n)) + list(range(1, n))
    cols = list(range(n)) + [0] * (n - 1)
    vals = [4.0] * n + [0.5] * (n - 1)
    return lg.SparseSymmetric.from_triplets(n, rows, cols, vals)


def ar1_dense_precision(n, a):
    cov = np.array([[a ** abs(i - j) for j in range(n)] for i in range(n)])
    return np.linalg.inv(cov)


class TestSparseSymmetric:
    def test_rejects_upper_entries(self):
        with pytest.raises(ValueError):
            lg.SparseSymmetric.from_triplets(2, [0], [1], [1.0])

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            lg.SparseSymmetric.from_triplets(2, [1, 1], [0, 0], [1.0, 2.0])

    def test_full_symmetry(self):
        Q = lg.SparseSymmetric.from_triplets(2, [0, 1, 1], [0, 0, 1], [2.0, -1.0, 2.0])
        assert np.allclose(Q.to_dense(), [[2, -1], [-1, 2]])

    def test_triplet_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        Q = lg.SparseSymmetric.from_full(random_spd(9, rng))
        path = tmp_path / "q.txt"
        Q.save_triplets(path)
        back = lg.SparseSymmetric.load_triplets(path)
        assert back.n == Q.n
        assert np.allclose(back.to_dense(), Q.to_dense())
        header = path.read_text().splitlines()[0].split()
        assert int(header[0]) == 9 and int(header[1]) == Q.nnz_lower


class TestReorder:
    def test_identity_matrix_gives_identity(self):
        Q = lg.SparseSymmetric.from_full(np.eye(8))
        assert np.array_equal(lg.reorder(Q).order, np.arange(8))

    def test_arrow_matrix_zero_fill(self):
        Q = arrow_matrix(20)
        perm = lg.reorder(Q)
        assert symbolic_fill(Q.to_dense(), perm.order) == 0
        # identity ordering eliminates the hub first and fills everything
        assert symbolic_fill(Q.to_dense(), np.arange(20)) == 19 * 18 // 2

    def test_tridiagonal_zero_fill(self):
        n = 50
        rows = list(range(n)) + list(range(1, n))
        cols = list(range(n)) + list(range(n - 1))
        vals = [2.0] * n + [-0.9] * (n - 1)
        Q = lg.SparseSymmetric.from_triplets(n, rows, cols, vals)
        perm = lg.reorder(Q)
        assert symbolic_fill(Q.to_dense(), perm.order) == 0

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        Q = lg.SparseSymmetric.from_full(random_spd(30, rng))
        assert lg.reorder(Q) == lg.reorder(Q)

    def test_permutation_roundtrip(self):
        rng = np.random.default_rng(5)
        Q = lg.SparseSymmetric.from_full(random_spd(12, rng))
        p = lg.reorder(Q)
        assert np.array_equal(p.order[p.inverse().order], np.arange(12))


class TestFactorize:
    def test_identity(self):
        Q = lg.SparseSymmetric.from_full(np.eye(3))
        f = lg.factorize(Q)
        assert np.allclose(f.L.toarray(), np.eye(3))
        assert f.logdet == pytest.approx(0.0, abs=1e-14)

    def test_two_by_two_logdet(self):
        Q = lg.SparseSymmetric.from_full(np.array([[2.0, 1.0], [1.0, 2.0]]))
        f = lg.factorize(Q)
        assert f.logdet == pytest.approx(np.log(3.0), abs=1e-12)

    def test_ar1_logdet(self):
        Qd = ar1_dense_precision(3, 0.5)
        f = lg.factorize(lg.SparseSymmetric.from_full(Qd))
        assert f.logdet == pytest.approx(-2.0 * np.log(1 - 0.25), abs=1e-10)

    def test_not_positive_definite(self):
        Q = lg.SparseSymmetric.from_full(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(NotPositiveDefinite):
            lg.factorize(Q)

    def test_reconstruction(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            Qd = random_spd(25, rng)
            Q = lg.SparseSymmetric.from_full(Qd)
            f = lg.factorize(Q, lg.reorder(Q))
            P = np.eye(25)[f.perm.order]
            resid = np.abs(P @ Qd @ P.T - (f.L @ f.L.T).toarray()).max()
            assert resid <= 1e-10 * np.abs(Qd).max()
            assert np.all(f.L.diagonal() > 0)


class TestSolve:
    def test_identity(self):
        Q = lg.SparseSymmetric.from_full(np.eye(4))
        f = lg.factorize(Q)
        b = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.allclose(lg.solve(f, b), b)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        Qd = random_spd(30, rng)
        f = lg.factorize(lg.SparseSymmetric.from_full(Qd), None)
        b = rng.standard_normal(30)
        x = lg.solve(f, b)
        assert np.linalg.norm(Qd @ x - b) <= 1e-9 * np.linalg.norm(b)
        assert np.allclose(x, np.linalg.solve(Qd, b), rtol=1e-9, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        Qd = random_spd(20, rng)
        Q = lg.SparseSymmetric.from_full(Qd)
        b = rng.standard_normal(20)
        x1 = lg.solve(lg.factorize(Q), b)
        x2 = lg.solve(lg.factorize(Q, lg.reorder(Q)), b)
        assert np.abs(x1 - x2).max() <= 1e-10

    def test_dimension_mismatch(self):
        f = lg.factorize(lg.SparseSymmetric.from_full(np.eye(3)))
        with pytest.raises(DimensionMismatch):
            lg.solve(f, np.ones(4))


class TestSelectedInverse:
    def test_diagonal_matrix(self):
        Q = lg.SparseSymmetric.from_full(np.diag([2.0, 4.0]))
        S = lg.selected_inverse(lg.factorize(Q))
        assert np.allclose(S.diagonal(), [0.5, 0.25])

    def test_ar1_unit_marginals(self):
        Qd = ar1_dense_precision(3, 0.5)
        S = lg.selected_inverse(lg.factorize(lg.SparseSymmetric.from_full(Qd)))
        assert np.allclose(S.diagonal(), 1.0, atol=1e-10)

    def test_random_spd_diagonal(self):
        rng = np.random.default_rng(7)
        Qd = random_spd(40, rng)
        Q = lg.SparseSymmetric.from_full(Qd)
        S = lg.selected_inverse(lg.factorize(Q, lg.reorder(Q)))
        assert np.abs(S.diagonal() - np.diag(np.linalg.inv(Qd))).max() <= 1e-8

    def test_off_diagonal_entries(self):
        rng = np.random.default_rng(8)
        Qd = random_spd(25, rng)
        Q = lg.SparseSymmetric.from_full(Qd)
        S = lg.selected_inverse(lg.factorize(Q, lg.reorder(Q)))
        Sinv = np.linalg.inv(Qd)
        coo = S.lower.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            assert abs(v - Sinv[i, j]) <= 1e-9

    def test_general_recursion_path(self):
        import laplgm.sparse as sps
        rng = np.random.default_rng(9)
        Qd = random_spd(35, rng, density=0.08)
        Q = lg.SparseSymmetric.from_full(Qd)
        old = sps._BAND_FLOP_CAP
        sps._BAND_FLOP_CAP = 0  # force the closed-pattern recursion
        try:
            S = lg.selected_inverse(lg.factorize(Q, lg.reorder(Q)))
        finally:
            sps._BAND_FLOP_CAP = old
        assert np.abs(S.diagonal() - np.diag(np.linalg.inv(Qd))).max() <= 1e-8


class TestSample:
    def test_deterministic(self):
        Q = lg.SparseSymmetric.from_full(np.eye(5))
        f = lg.factorize(Q)
        X1 = lg.sample(f, 7, seed=123)
        X2 = lg.sample(f, 7, seed=123)
        assert np.array_equal(X1, X2)
        assert X1.shape == (5, 7)

    def test_identity_component_variance(self):
        Q = lg.SparseSymmetric.from_full(np.eye(5))
        f = lg.factorize(Q)
        X = lg.sample(f, 10_000, seed=7)
        tol = 3.0 * np.sqrt(2.0 / 10_000)
        assert np.all(np.abs(X.var(axis=1, ddof=1) - 1.0) <= tol)

    def test_two_dim_covariance(self):
        Qd = np.array([[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]])
        f = lg.factorize(lg.SparseSymmetric.from_full(Qd))
        X = lg.sample(f, 100_000, seed=21)
        emp = np.cov(X)
        assert np.abs(emp - np.array([[1.0, 0.5], [0.5, 1.0]])).max() <= 0.02

    def test_count_validation(self):
        f = lg.factorize(lg.SparseSymmetric.from_full(np.eye(2)))
        with pytest.raises(ValueError):
            lg.sample(f, 0, seed=1)


class TestConstrain:
    def test_identity_mean_removal(self):
        n = 6
        f = lg.factorize(lg.SparseSymmetric.from_full(np.eye(n)))
        X = lg.sample(f, 4, seed=3)
        M = np.ones((1, n))
        mean_c, X_c = lg.constrain(np.zeros(n), X, f, M, np.zeros(1))
        assert np.allclose(X_c, X - X.mean(axis=0, keepdims=True))
        assert np.allclose(mean_c, 0.0)

    def test_constraint_satisfied_exactly(self):
        rng = np.random.default_rng(6)
        n = 12
        Qd = random_spd(n, rng)
        f = lg.factorize(lg.SparseSymmetric.from_full(Qd))
        M = rng.standard_normal((2, n))
        e = rng.standard_normal(2)
        X = lg.sample(f, 9, seed=8)
        mean_c, X_c = lg.constrain(rng.standard_normal(n), X, f, M, e)
        assert np.abs(M @ X_c - e[:, None]).max() <= 1e-10
        assert np.abs(M @ mean_c - e).max() <= 1e-10

    def test_conditional_covariance(self):
        rng = np.random.default_rng(10)
        n = 5
        Qd = random_spd(n, rng, density=0.5)
        f = lg.factorize(lg.SparseSymmetric.from_full(Qd))
        M = rng.standard_normal((1, n))
        e = np.zeros(1)
        X = lg.sample(f, 100_000, seed=5)
        _, X_c = lg.constrain(np.zeros(n), X, f, M, e)
        cov = np.linalg.inv(Qd)
        corr = cov @ M.T @ np.linalg.inv(M @ cov @ M.T) @ M @ cov
        cond = cov - corr
        assert np.abs(np.cov(X_c) - cond).max() <= 0.02

    def test_singular_constraint(self):
        f = lg.factorize(lg.SparseSymmetric.from_full(np.eye(4)))
        M = np.vstack([np.ones(4), np.ones(4)])  # rank deficient
        with pytest.raises(SingularConstraint):
            lg.constrain(np.zeros(4), None, f, M, np.zeros(2))


class TestProperties:
    def test_factorize_solve_cycle_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            n = int(rng.integers(5, 61))
            Qd = random_spd(n, rng)
            Q = lg.SparseSymmetric.from_full(Qd)
            f = lg.factorize(Q, lg.reorder(Q))
            b = rng.standard_normal(n)
            x = lg.solve(f, b)
            assert np.linalg.norm(Qd @ x - b) <= 1e-9 * max(np.linalg.norm(b), 1.0)
            assert abs(f.logdet - np.linalg.slogdet(Qd)[1]) <= 1e-8
            S = lg.selected_inverse(f)
            assert np.abs(S.diagonal() - np.diag(np.linalg.inv(Qd))).max() <= 1e-8

    def test_banded_scaling_smoke(self):
        def tridiag(n):
            rows = list(range(n)) + list(range(1, n))
            cols = list(range(n)) + list(range(n - 1))
            vals = [2.1] * n + [-1.0] * (n - 1)
            return lg.SparseSymmetric.from_triplets(n, rows, cols, vals)

        def best_time(n):
            Q = tridiag(n)
            times = []
            for _ in range(3):
                t0 = time.perf_counter()
                lg.factorize(Q)
                times.append(time.perf_counter() - t0)
            return min(times)

        t1 = best_time(2000)
        t2 = best_time(4000)
        assert t2 < 4.0 * max(t1, 1e-4)
