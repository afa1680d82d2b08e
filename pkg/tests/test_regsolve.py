import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls as scipy_nnls

from relaxo.drt import simulation_set
from relaxo.forward import add_noise, synthesize_spectrum
from relaxo.regsolve import (
    Method,
    RegularizedProblem,
    build_regularizer,
    kkt_violation,
    solve,
    solve_ls,
    solve_nnls_activeset,
    solve_nnls_sbb,
)


def brute_force_nnls(a, b):
    """Global NNLS minimiser by enumerating every candidate support."""
    n = a.shape[1]
    best_x, best_f = np.zeros(n), float(b @ b)
    for k in range(1, n + 1):
        for cols in itertools.combinations(range(n), k):
            z = np.linalg.lstsq(a[:, cols], b, rcond=None)[0]
            if np.all(z >= 0):
                x = np.zeros(n)
                x[list(cols)] = z
                r = a @ x - b
                if r @ r < best_f:
                    best_x, best_f = x, float(r @ r)
    return best_x


def random_problem(rng, m=6, n=4, reg=None, lam=0.0):
    a = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    return RegularizedProblem(a, b, build_regularizer(reg or "I", n), lam)


@pytest.fixture(scope="module")
def a4_problem(op_a4):
    sp = add_noise(synthesize_spectrum(simulation_set("A-RQ")), 1e-3, 5)
    return RegularizedProblem(op_a4, sp.data, build_regularizer("I", op_a4.n_nodes))


class TestRegularizer:
    def test_first_difference(self):
        assert np.array_equal(build_regularizer("L1", 3).matrix, [[-1, 1, 0], [0, -1, 1]])

    def test_second_difference(self):
        assert np.array_equal(build_regularizer("L2", 4).matrix, [[1, -2, 1, 0], [0, 1, -2, 1]])

    def test_identity(self):
        assert np.array_equal(build_regularizer("I", 3).matrix, np.eye(3))

    @pytest.mark.parametrize("kind", ["L1", "L2"])
    def test_constants_in_null_space(self, kind):
        L = build_regularizer(kind, 9).matrix
        assert np.allclose(L @ np.ones(9), 0)
        assert np.allclose(L.sum(axis=1), 0)

    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            build_regularizer("L2", 2)
        with pytest.raises(ValueError):
            build_regularizer("L1", 1)


class TestProblem:
    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            RegularizedProblem(np.eye(3), np.ones(4), build_regularizer("I", 3))
        with pytest.raises(ValueError):
            RegularizedProblem(np.eye(3), np.ones(3), build_regularizer("I", 4))
        with pytest.raises(ValueError):
            RegularizedProblem(np.eye(3), np.ones(3), build_regularizer("I", 3), -1.0)

    def test_objective_identity(self, rng):
        p = random_problem(rng, 8, 5, "L1", 0.7)
        x = rng.random(5)
        a, b = p.stacked()
        r = a @ x - b
        sol = solve_ls(p)
        assert p.objective(x) == pytest.approx(r @ r, rel=1e-12)
        assert sol.objective == pytest.approx(p.objective(sol.x), rel=1e-10)


class TestLeastSquares:
    def test_identity_unregularised(self, rng):
        b = rng.standard_normal(5)
        sol = solve_ls(RegularizedProblem(np.eye(5), b, build_regularizer("I", 5), 0.0))
        assert np.allclose(sol.x, b)

    def test_identity_halves(self, rng):
        b = rng.standard_normal(5)
        sol = solve_ls(RegularizedProblem(np.eye(5), b, build_regularizer("I", 5), 1.0))
        assert np.allclose(sol.x, b / 2)

    @pytest.mark.parametrize("reg", ["I", "L1", "L2"])
    def test_normal_equations_oracle(self, rng, reg):
        p = random_problem(rng, 8, 5, reg, 0.3)
        a, b, L = p.matrix, p.data, p.regularizer.matrix
        x_ref = np.linalg.solve(a.T @ a + 0.09 * L.T @ L, a.T @ b)
        sol = solve_ls(p)
        assert np.allclose(sol.x, x_ref, atol=1e-8)
        stat = np.linalg.norm((a.T @ a + 0.09 * L.T @ L) @ sol.x - a.T @ b)
        assert stat <= 1e-8 * np.linalg.norm(a.T @ b)

    def test_rank_deficient_minimum_norm(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        sol = solve_ls(RegularizedProblem(a, np.array([2.0, 2.0]), build_regularizer("I", 2), 0.0))
        assert sol.rank_deficient
        assert np.allclose(sol.x, [1.0, 1.0])

    def test_norms_recomputable(self, rng):
        p = random_problem(rng, 8, 5, "L2", 0.5)
        sol = solve_ls(p)
        assert sol.residual_norm == pytest.approx(np.linalg.norm(p.matrix @ sol.x - p.data), abs=1e-10)
        assert sol.seminorm == pytest.approx(np.linalg.norm(p.regularizer.matrix @ sol.x), abs=1e-10)


class TestActiveSet:
    def test_clamping(self):
        p = RegularizedProblem(np.eye(2), np.array([1.0, -1.0]), build_regularizer("I", 2))
        sol = solve_nnls_activeset(p)
        assert np.array_equal(sol.x, [1.0, 0.0]) and sol.converged

    def test_nonnegative_data(self, rng):
        b = rng.random(6)
        sol = solve_nnls_activeset(RegularizedProblem(np.eye(6), b, build_regularizer("I", 6)))
        assert np.allclose(sol.x, b, atol=1e-14)

    def test_brute_force_oracle(self, rng):
        for k in range(50):
            if k % 2:
                p = random_problem(rng, 6, 4)
            else:
                p = random_problem(rng, 3, 4, ["I", "L1", "L2"][k % 3], rng.uniform(0.1, 2))
            a, b = p.stacked()
            sol = solve_nnls_activeset(p)
            assert a.shape[1] == 4
            assert np.allclose(sol.x, brute_force_nnls(a, b), atol=1e-8)
            assert sol.converged and kkt_violation(p, sol.x) <= 1e-8

    def test_matches_scipy_on_operator(self, a4_problem):
        for lam in (1e-4, 1e-2, 1.0):
            p = a4_problem.with_lambda(lam)
            sol = solve_nnls_activeset(p)
            ref = scipy_nnls(*p.stacked(), maxiter=5000)[0]
            assert sol.objective <= p.objective(ref) * (1 + 1e-9)
            assert kkt_violation(p, sol.x) <= 1e-8

    def test_warm_start_same_answer(self, a4_problem):
        p = a4_problem.with_lambda(1e-3)
        cold = solve_nnls_activeset(p)
        warm = solve_nnls_activeset(p, init=solve_nnls_activeset(a4_problem.with_lambda(1e-2)).x)
        assert np.allclose(cold.x, warm.x, atol=1e-8 * np.max(cold.x))

    def test_bad_init(self, rng):
        p = random_problem(rng)
        with pytest.raises(ValueError):
            solve_nnls_activeset(p, init=-np.ones(4))

    def test_iteration_cap(self, rng):
        p = random_problem(rng, 10, 6)
        sol = solve_nnls_activeset(p, max_iter=0)
        if np.any(p.stacked()[0].T @ p.stacked()[1] > 0):
            assert not sol.converged

    def test_agrees_with_ls_when_unconstrained_is_positive(self, rng):
        a = rng.random((8, 4)) + 0.5
        x_true = rng.random(4) + 0.5
        p = RegularizedProblem(a, a @ x_true, build_regularizer("L1", 4), 0.01)
        ls = solve_ls(p)
        assert np.all(ls.x > 0)
        assert np.allclose(solve_nnls_activeset(p).x, ls.x, atol=1e-8)

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0), st.sampled_from(["I", "L1", "L2"]))
    @settings(max_examples=60, deadline=None)
    def test_kkt_property(self, seed, lam, reg):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, 9, 6, reg, lam)
        sol = solve_nnls_activeset(p)
        assert np.all(sol.x >= 0)
        assert sol.converged and kkt_violation(p, sol.x) <= 1e-8


class TestMonotonicity:
    @pytest.mark.parametrize("method", [Method.LS, Method.NNLS_ACTIVESET])
    def test_norms_monotone_in_lambda(self, rng, method):
        p = random_problem(rng, 12, 8, "L2")
        lams = np.logspace(-3, 1, 15)
        sols = [solve(p.with_lambda(l), method) for l in lams]
        rho = np.array([s.residual_norm for s in sols])
        eta = np.array([s.seminorm for s in sols])
        assert np.all(np.diff(rho) >= -1e-8)
        assert np.all(np.diff(eta) <= 1e-8)


class TestSBB:
    def test_optimal_start(self):
        p = RegularizedProblem(np.eye(3), np.array([1.0, 2.0, 0.5]), build_regularizer("I", 3))
        sol = solve_nnls_sbb(p, init=np.array([1.0, 2.0, 0.5]))
        assert sol.converged and sol.iterations <= 1

    def test_matches_activeset(self, rng):
        for k in range(20):
            p = random_problem(rng, 8, 5, ["I", "L1", "L2"][k % 3], rng.uniform(0.01, 1.0))
            ref = solve_nnls_activeset(p)
            sol = solve_nnls_sbb(p)
            assert np.all(sol.x >= 0)
            gap = (sol.objective - ref.objective) / ref.objective
            assert gap <= 1e-6

    def test_never_worse_than_start(self, a4_problem):
        p = a4_problem.with_lambda(1e-4)
        x0 = np.full(p.n, 0.01)
        sol = solve_nnls_sbb(p, init=x0, max_iter=50)
        assert not sol.converged
        assert sol.objective <= p.objective(x0)

    def test_projected_gradient_on_success(self, rng):
        p = random_problem(rng, 10, 6, "L1", 0.2)
        sol = solve_nnls_sbb(p, tol=1e-8)
        a, b = p.stacked()
        g = a.T @ (a @ sol.x - b)
        assert sol.converged
        assert np.max(np.abs(sol.x - np.maximum(sol.x - g, 0))) <= 1e-8 * (1 + np.max(np.abs(g)))

    def test_rough_at_small_lambda(self, a4_problem):
        # solutions exist but get rougher as lambda shrinks
        semis = [solve_nnls_sbb(a4_problem.with_lambda(l), max_iter=2000).seminorm
                 for l in (1e-1, 1e-2, 1e-3)]
        assert semis[0] < semis[1] < semis[2]

    def test_pure_nnls(self):
        p = RegularizedProblem(np.eye(2), np.array([1.0, -1.0]), build_regularizer("I", 2), 0.0)
        assert np.allclose(solve_nnls_sbb(p).x, [1.0, 0.0])
