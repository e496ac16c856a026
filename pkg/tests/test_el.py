"""Tests for the likelihood-based expectile-level matching machinery."""

import numpy as np
import pytest
from scipy import optimize, stats

from calsel.el import (
    ElProblem,
    ElSolution,
    estimating_functions,
    grid_search_tau,
    max_el_estimate,
    neg_log_el,
    sample_expectile,
    solve_lambda,
)
from calsel.errors import (
    EstimationFailureError,
    InfeasibilityError,
    InsufficientDataError,
    ParameterError,
    SingularityError,
)
from calsel.tails import h_map, normal_spec


def exact_solution_sample():
    """Four points whose sample estimating equations hold at (mu=0, tau=1/7).

    With alpha = 0.25 exactly one point sits below mu, and the expectile
    equation balances: -1.2 + 0.2 (1 + 2 + 3) = 0.
    """
    return np.array([-1.0, 1.0, 2.0, 3.0]), 0.0, 1.0 / 7.0, 0.25


def oracle_lambda(w, start=None):
    """Independent dual solve via MINPACK's hybrid method, then verified."""
    def resid(lam):
        z = 1.0 + w @ lam
        if np.any(z <= 0):
            return np.full(2, 1e6)
        return w.T @ (1.0 / z) / len(w)

    for s in ([0.0, 0.0] if start is None else start, [0.01, -0.01], [-0.05, 0.05]):
        lam, info, ok, _ = optimize.fsolve(resid, s, full_output=True)
        z = 1.0 + w @ lam
        if ok == 1 and np.all(z > 0) and np.linalg.norm(w.T @ (1.0 / z) / len(w)) < 1e-10:
            return lam
    return None


def test_estimating_functions_hand_values():
    w = estimating_functions(np.array([-1.0, 1.0]), mu=0.0, tau=0.25, alpha=0.25)
    np.testing.assert_allclose(w, [[-1.5, 0.75], [0.5, -0.25]], rtol=1e-15)


def test_estimating_functions_far_left_location():
    eps = np.array([-2.0, 0.0, 3.0])
    w = estimating_functions(eps, mu=-1e12, tau=0.1, alpha=0.3)
    np.testing.assert_array_equal(w[:, 1], np.full(3, -0.3))
    ratio = 0.1 / 0.8
    np.testing.assert_allclose(w[:, 0], ratio * (eps + 1e12), rtol=1e-12)


def test_estimating_functions_level_validation():
    eps = np.arange(5.0)
    with pytest.raises(SingularityError):
        estimating_functions(eps, 0.0, 0.5, 0.25)
    with pytest.raises(ParameterError):
        estimating_functions(eps, 0.0, 0.0, 0.25)
    with pytest.raises(ParameterError):
        estimating_functions(eps, 0.0, 1.2, 0.25)


def test_population_moment_vanishes_at_matched_pair():
    spec = normal_spec()
    alpha = 0.05
    mu = spec.quantile(alpha)
    tau = h_map(spec, alpha)
    rng = np.random.default_rng(17)
    eps = rng.standard_normal(1_000_000)
    w = estimating_functions(eps, mu, tau, alpha)
    means = w.mean(axis=0)
    ses = w.std(axis=0) / np.sqrt(len(eps))
    assert np.all(np.abs(means) < 4.0 * ses)


def test_solve_lambda_zero_on_balanced_rows():
    w = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    lam = solve_lambda(w)
    np.testing.assert_allclose(lam, [0.0, 0.0], atol=1e-12)
    # symmetric pairs more generally
    rng = np.random.default_rng(2)
    half = rng.standard_normal((40, 2))
    lam2 = solve_lambda(np.vstack([half, -half]))
    np.testing.assert_allclose(lam2, [0.0, 0.0], atol=1e-10)


def test_solve_lambda_residual_contract():
    rng = np.random.default_rng(6)
    for _ in range(20):
        eps = rng.standard_normal(120)
        mu = np.quantile(eps, 0.1) + rng.uniform(-0.05, 0.05)
        w = estimating_functions(eps, mu, 0.03, 0.1)
        lam = solve_lambda(w)
        z = 1.0 + w @ lam
        assert np.all(z > 0)
        assert np.linalg.norm(w.T @ (1.0 / z) / len(w)) < 1e-10


def test_solve_lambda_matches_independent_root_finder():
    rng = np.random.default_rng(12)
    done = 0
    while done < 20:
        eps = rng.standard_normal(100)
        mu = np.quantile(eps, 0.15) + rng.uniform(-0.1, 0.1)
        tau = rng.uniform(0.02, 0.2)
        try:
            w = estimating_functions(eps, mu, tau, 0.15)
            lam = solve_lambda(w)
        except (InfeasibilityError, EstimationFailureError):
            continue
        ref = oracle_lambda(w)
        if ref is None:
            continue
        np.testing.assert_allclose(lam, ref, atol=1e-8)
        done += 1


def test_solve_lambda_infeasible_when_moments_cannot_balance():
    # every row has the same sign in the second coordinate
    w = np.column_stack([np.linspace(-1, 1, 10), np.full(10, -0.2)])
    with pytest.raises(InfeasibilityError):
        solve_lambda(w)


def test_neg_log_el_zero_at_exact_solution():
    eps, mu, tau, alpha = exact_solution_sample()
    assert neg_log_el(eps, mu, tau, alpha) == pytest.approx(0.0, abs=1e-12)


def test_neg_log_el_nonnegative():
    rng = np.random.default_rng(8)
    eps = rng.standard_normal(400)
    for mu in np.quantile(eps, [0.04, 0.05, 0.07]):
        assert neg_log_el(eps, float(mu), 0.0124, 0.05) >= -1e-12


def test_neg_log_el_wilks_calibration():
    # at the true pair the ratio behaves like a chi-square with 2 dof
    spec = normal_spec()
    alpha = 0.05
    mu0 = spec.quantile(alpha)
    tau0 = h_map(spec, alpha)
    rng = np.random.default_rng(23)
    vals = []
    for _ in range(500):
        eps = rng.standard_normal(1000)
        try:
            vals.append(neg_log_el(eps, mu0, tau0, alpha))
        except (InfeasibilityError, EstimationFailureError):
            continue
    assert len(vals) > 480
    assert np.mean(vals) == pytest.approx(2.0, abs=0.3)


def test_perturbing_location_increases_the_ratio():
    rng = np.random.default_rng(31)
    eps = rng.standard_normal(100_000)
    sol = max_el_estimate(ElProblem(residuals=eps, alpha=0.05))
    for shift in (-0.5, 0.5):
        assert neg_log_el(eps, sol.mu + shift, sol.tau, 0.05) >= sol.logel + 1.0


def test_max_el_normal_reference_values():
    rng = np.random.default_rng(41)
    eps = rng.standard_normal(100_000)
    sol = max_el_estimate(ElProblem(residuals=eps, alpha=0.05))
    assert sol.feasible and not sol.boundary
    assert sol.mu == pytest.approx(-1.6449, abs=0.02)
    assert sol.tau == pytest.approx(0.0124, abs=0.002)
    assert sol.logel >= 0.0
    # the location equation is solved exactly at an order statistic
    assert sol.lam[0] == 0.0


def test_max_el_uniform_reference_values():
    rng = np.random.default_rng(43)
    eps = rng.uniform(-1.0, 1.0, 100_000)
    sol = max_el_estimate(ElProblem(residuals=eps, alpha=0.25))
    assert sol.tau == pytest.approx(0.1, abs=0.005)
    assert sol.mu == pytest.approx(-0.5, abs=0.02)


def test_max_el_scale_equivariance():
    rng = np.random.default_rng(47)
    eps = rng.standard_normal(3000)
    a = max_el_estimate(ElProblem(residuals=eps, alpha=0.05))
    b = max_el_estimate(ElProblem(residuals=3.0 * eps, alpha=0.05))
    assert b.mu == pytest.approx(3.0 * a.mu, rel=1e-12)
    assert b.tau == pytest.approx(a.tau, rel=1e-9)


def test_max_el_upper_tail_reflection():
    rng = np.random.default_rng(53)
    eps = rng.standard_normal(5000)
    up = max_el_estimate(ElProblem(residuals=eps, alpha=0.95))
    lo = max_el_estimate(ElProblem(residuals=-eps, alpha=0.05))
    assert up.mu == pytest.approx(-lo.mu, rel=1e-12)
    assert up.tau == pytest.approx(lo.tau, rel=1e-12)


def test_max_el_flags_levels_pinned_at_the_tau_ceiling():
    rng = np.random.default_rng(59)
    eps = rng.standard_normal(300)
    sol = max_el_estimate(ElProblem(residuals=eps, alpha=0.4999))
    assert sol.boundary


def test_max_el_degenerate_sample_fails_loudly():
    with pytest.raises(EstimationFailureError):
        max_el_estimate(ElProblem(residuals=np.full(200, 2.5), alpha=0.05))


def test_el_problem_validation():
    with pytest.raises(InsufficientDataError):
        ElProblem(residuals=np.arange(10.0), alpha=0.05)
    with pytest.raises(ParameterError):
        ElProblem(residuals=np.arange(100.0), alpha=0.5)
    bad = np.arange(100.0)
    bad[3] = np.nan
    with pytest.raises(ParameterError):
        ElProblem(residuals=bad, alpha=0.05)


def test_coverage_moment_near_target_at_solution():
    rng = np.random.default_rng(61)
    eps = rng.standard_normal(5000)
    sol = max_el_estimate(ElProblem(residuals=eps, alpha=0.05))
    cover = np.mean(eps < sol.mu)
    assert abs(cover - 0.05) < 3.0 / np.sqrt(len(eps))


def test_solution_serialization_keys():
    sol = ElSolution(
        mu=-1.6, tau=0.012, lam=np.array([0.0, 0.1]), logel=0.5, feasible=True
    )
    d = sol.to_json_dict()
    assert set(d) == {
        "mu", "tau", "lambda", "logel", "feasible", "boundary_flag", "fallback",
    }
    assert d["lambda"] == [0.0, 0.1]
    assert d["boundary_flag"] is False


def test_grid_search_recovers_analytic_level():
    rng = np.random.default_rng(67)
    eps = rng.uniform(-1.0, 1.0, 100_000)
    tau = grid_search_tau(eps, 0.25)
    assert tau == pytest.approx(0.1, abs=0.005)


def test_grid_search_symmetric_sample_at_half():
    rng = np.random.default_rng(71)
    half = rng.standard_normal(2000)
    sym = np.concatenate([half, -half])
    tau = grid_search_tau(sym, 0.5)
    assert abs(tau - 0.5) <= 2e-4


def test_grid_search_constant_data_takes_smallest_level():
    tau = grid_search_tau(np.full(100, 7.0), 0.1)
    assert tau == pytest.approx(1e-4, rel=1e-9)


def test_grid_search_validation():
    with pytest.raises(ParameterError):
        grid_search_tau(np.arange(50.0), 0.05, step=0.5)
    with pytest.raises(ParameterError):
        grid_search_tau(np.array([]), 0.05)


def test_sample_expectile_exact_cases():
    rng = np.random.default_rng(73)
    x = rng.standard_normal(501)
    assert sample_expectile(x, 0.5) == pytest.approx(np.mean(x), abs=1e-12)
    assert sample_expectile(np.array([0.0, 1.0]), 0.9) == pytest.approx(0.9, abs=1e-12)
    u = rng.uniform(-1.0, 1.0, 100_000)
    assert sample_expectile(u, 0.1) == pytest.approx(-0.5, abs=0.01)


def test_sample_expectile_monotone_in_level():
    rng = np.random.default_rng(79)
    x = rng.standard_normal(200)
    vals = [sample_expectile(x, t) for t in np.linspace(0.05, 0.95, 19)]
    assert np.all(np.diff(vals) > 0)


def test_sample_expectile_validation():
    with pytest.raises(ParameterError):
        sample_expectile(np.array([]), 0.5)
    with pytest.raises(ParameterError):
        sample_expectile(np.ones(5), 0.0)


def test_sample_expectile_matches_direct_minimization():
    rng = np.random.default_rng(83)
    x = rng.standard_normal(300)
    for tau in (0.1, 0.37, 0.8):
        mu = sample_expectile(x, tau)
        w = np.where(x - mu < 0, 1.0 - tau, tau)
        # first-order condition of the asymmetric squared loss
        assert np.sum(w * (x - mu)) == pytest.approx(0.0, abs=1e-8)
