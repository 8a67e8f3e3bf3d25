import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from onestep.solver import (
    BalanceProblem,
    DualCheckError,
    WeightSolution,
    dual_weights_check,
    equality_oracle,
    solve_weights,
    uniform_relaxation,
    verify_kkt,
)


def column(*v):
    return np.array(v, dtype=float)[:, None]


def test_normalization_only_gives_uniform():
    p = BalanceProblem(np.zeros((4, 0)), np.zeros(0), np.zeros(0))
    sol = solve_weights(p)
    assert sol.optimal
    assert_allclose(sol.weights, 0.25)
    assert_allclose(sol.objective, 0.25)
    rep = verify_kkt(p, sol)
    assert rep.passed
    assert max(rep.stationarity_residual, rep.primal_violation, rep.complementarity_violation) < 1e-14


def test_equality_example_matches_hand_solution():
    p = BalanceProblem(column(0, 1, 2), [1.5], [0.0], nonnegative=False)
    sol = solve_weights(p)
    assert_allclose(sol.weights, [1 / 12, 4 / 12, 7 / 12], atol=1e-12)
    assert_allclose(equality_oracle(p.B, p.target), [1 / 12, 4 / 12, 7 / 12], atol=1e-12)


def test_nonnegative_example():
    sol = solve_weights(BalanceProblem(column(0, 1, 1), [0.5], [0.0]))
    assert_allclose(sol.weights, [0.5, 0.25, 0.25], atol=1e-12)


def test_oracle_examples():
    assert_allclose(equality_oracle(column(0, 1, 2), [1.0]), 1 / 3)
    assert_allclose(equality_oracle(np.zeros((3, 0)), np.zeros(0)), 1 / 3)
    with pytest.raises(np.linalg.LinAlgError):
        equality_oracle(np.ones((3, 1)), [1.0])


def test_kkt_flags_perturbation():
    p = BalanceProblem(column(0, 1, 2), [1.5], [0.0], nonnegative=False)
    sol = solve_weights(p)
    assert verify_kkt(p, sol, 1e-10).passed
    bad = WeightSolution(sol.weights + np.array([0.01, 0, 0]), sol.lam, sol.nu, sol.imbalances,
                         sol.objective, sol.status, sol.iterations)
    assert not verify_kkt(p, bad).passed


def test_dual_reconstruction_examples():
    p = BalanceProblem(column(0, 1, 2), [1.5], [0.0], nonnegative=False)
    assert dual_weights_check(p, solve_weights(p)) <= 1e-8
    p0 = BalanceProblem(np.zeros((5, 0)), np.zeros(0), np.zeros(0))
    assert dual_weights_check(p0, solve_weights(p0)) == 0.0


def test_dual_check_refuses_pinned_weights():
    p = BalanceProblem(column(0, 1, 2, 3), [2.8], [0.0])
    sol = solve_weights(p)
    assert sol.optimal and np.min(sol.weights) == 0.0
    with pytest.raises(DualCheckError):
        dual_weights_check(p, sol)


def test_infeasible_reports_hint():
    p = BalanceProblem(column(0, 1, 2), [3.0], [0.0])
    sol = solve_weights(p)
    assert sol.status == "infeasible"
    assert_allclose(sol.relaxation_hint, uniform_relaxation(p))
    assert_allclose(sol.relaxation_hint, 2.0)


def test_tolerance_band_is_respected():
    rng = np.random.default_rng(3)
    B = rng.normal(size=(60, 3))
    p = BalanceProblem(B, [0.3, -0.2, 0.1], [0.05, 0.05, 0.05])
    sol = solve_weights(p)
    assert sol.optimal
    assert np.all(np.abs(B.T @ sol.weights - p.target) <= p.deltas + 1e-10)
    assert verify_kkt(p, sol).passed


def test_problem_validation():
    with pytest.raises(ValueError):
        BalanceProblem(np.ones((3, 1)), [1.0, 2.0], [0.0])
    with pytest.raises(ValueError):
        BalanceProblem(np.ones((3, 1)), [1.0], [-0.1])
    with pytest.raises(ValueError):
        BalanceProblem(np.array([[np.nan], [1.0]]), [1.0], [0.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 20), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_matches_equality_oracle(m, K, seed):
    K = min(K, m - 1)
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(m, K))
    target = B.mean(axis=0) + rng.normal(scale=0.3, size=K)
    p = BalanceProblem(B, target, np.zeros(K), nonnegative=False)
    sol = solve_weights(p)
    assert sol.optimal
    assert_allclose(sol.weights, equality_oracle(B, target), atol=1e-9)
    assert verify_kkt(p, sol).passed
    assert dual_weights_check(p, sol) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 40), st.integers(1, 4), st.floats(0.0, 0.3), st.integers(0, 2**32 - 1))
def test_feasible_solutions_satisfy_constraints(m, K, delta, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(m, K))
    target = B.mean(axis=0) + rng.normal(scale=0.2, size=K)
    p = BalanceProblem(B, target, np.full(K, delta))
    sol = solve_weights(p)
    if sol.optimal:
        assert abs(sol.weights.sum() - 1) <= 1e-10
        assert np.all(sol.weights >= 0)
        assert np.all(np.abs(B.T @ sol.weights - target) <= delta + 1e-8)
        assert verify_kkt(p, sol).passed
    else:
        assert sol.relaxation_hint > 0


def test_agrees_with_generic_qp_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(11)
    for _ in range(40):
        m, K = rng.integers(8, 40), rng.integers(1, 5)
        B = rng.normal(size=(m, K))
        target = B.mean(axis=0) + rng.normal(scale=0.3, size=K)
        delta = rng.uniform(0, 0.2, size=K)
        sol = solve_weights(BalanceProblem(B, target, delta))
        w = cp.Variable(m)
        prob = cp.Problem(cp.Minimize(cp.sum_squares(w)),
                          [cp.sum(w) == 1, w >= 0, cp.abs(B.T @ w - target) <= delta])
        prob.solve(solver=cp.CLARABEL)
        if prob.status == "infeasible":
            assert not sol.optimal
        else:
            # interior-point accuracy is about 1e-5 on the weights; the
            # active-set objective can only be as good or better
            assert sol.optimal
            assert_allclose(sol.weights, w.value, atol=1e-4)
            assert sol.objective <= prob.value + 1e-7
