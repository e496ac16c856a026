"""Tests for the quantile/expectile/ES bridge formulas."""

import numpy as np
import pytest
from scipy import integrate, stats

from calsel.errors import ParameterError, SingularityError
from calsel.tails import (
    DistSpec,
    assert_h_increasing,
    c_epsilon,
    es_alpha,
    es_from_expectile,
    h_map,
    normal_spec,
    numeric_partial_moment,
    student_t_spec,
    uniform_spec,
)


def expectile_foc_gap(pdf, mu, tau):
    """Residual of tau E(X-mu)+ = (1-tau) E(mu-X)+ by quadrature."""
    upper = integrate.quad(lambda x: (x - mu) * pdf(x), mu, np.inf, limit=200)[0]
    lower = integrate.quad(lambda x: (mu - x) * pdf(x), -np.inf, mu, limit=200)[0]
    return tau * upper - (1.0 - tau) * lower


def test_normal_partial_moment_matches_quadrature():
    spec = normal_spec()
    for q in (-2.5, -1.0, 0.0, 0.7):
        num = numeric_partial_moment(spec.pdf, q)
        assert spec.partial_moment(q) == pytest.approx(num, abs=1e-9)


def test_student_t_partial_moment_matches_quadrature():
    for scaled in (False, True):
        spec = student_t_spec(5, scaled=scaled)
        for q in (-3.0, -0.8, 0.5):
            num = numeric_partial_moment(spec.pdf, q)
            assert spec.partial_moment(q) == pytest.approx(num, abs=1e-8)


def test_uniform_partial_moment_closed_form():
    spec = uniform_spec(-1.0, 1.0)
    for q in (-0.5, 0.0, 0.25):
        assert spec.partial_moment(q) == pytest.approx((q * q - 1.0) / 4.0, abs=1e-15)
    # saturates outside the support
    assert spec.partial_moment(-2.0) == 0.0
    assert spec.partial_moment(5.0) == pytest.approx(0.0, abs=1e-15)


def test_scaled_t_has_unit_variance():
    spec = student_t_spec(5, scaled=True)
    var = integrate.quad(lambda x: x * x * spec.pdf(x), -np.inf, np.inf, limit=400)[0]
    assert var == pytest.approx(1.0, abs=1e-6)
    s = np.sqrt(3.0 / 5.0)
    assert spec.quantile(0.05) == pytest.approx(s * stats.t.ppf(0.05, 5), rel=1e-12)


def test_h_map_solves_the_expectile_identity():
    # tau = h(alpha) must make the alpha-quantile an exact expectile
    for spec in (normal_spec(), student_t_spec(5, scaled=True)):
        for alpha in (0.05, 0.25):
            q = spec.quantile(alpha)
            tau = h_map(spec, alpha)
            assert abs(expectile_foc_gap(spec.pdf, q, tau)) < 1e-8


def test_h_map_normal_five_percent():
    tau = h_map(normal_spec(), 0.05)
    assert tau == pytest.approx(0.0124, abs=1e-4)


def test_h_map_uniform_quarter_is_exactly_one_tenth():
    assert h_map(uniform_spec(-1.0, 1.0), 0.25) == pytest.approx(0.1, abs=1e-12)


def test_h_map_symmetric_median_maps_to_half():
    for spec in (normal_spec(), student_t_spec(5, scaled=True), uniform_spec()):
        assert h_map(spec, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_h_map_below_identity_on_lower_tail():
    for spec in (normal_spec(), student_t_spec(5, scaled=True), uniform_spec()):
        for alpha in np.linspace(0.01, 0.45, 12):
            assert h_map(spec, float(alpha)) < alpha


def test_h_map_strictly_increasing():
    for spec in (normal_spec(), student_t_spec(5, scaled=True), uniform_spec()):
        assert_h_increasing(spec)


def test_h_map_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        h_map(normal_spec(), 0.0)
    with pytest.raises(ParameterError):
        h_map(normal_spec(), 1.0)
    shifted = DistSpec(
        name="shifted",
        quantile=lambda a: float(stats.norm.ppf(a, loc=1.0)),
        partial_moment=lambda q: float(-stats.norm.pdf(q - 1.0)),
        cdf=lambda x: float(stats.norm.cdf(x - 1.0)),
        mean=1.0,
    )
    with pytest.raises(ParameterError):
        h_map(shifted, 0.05)


def test_assert_h_increasing_flags_inconsistent_spec():
    # partial moment deliberately inconsistent with the quantile function
    broken = DistSpec(
        name="broken",
        quantile=lambda a: float(stats.norm.ppf(a)),
        partial_moment=lambda q: float(-stats.norm.pdf(q) * (1.0 + 0.8 * np.sin(6.0 * q))),
        cdf=lambda x: float(stats.norm.cdf(x)),
        mean=0.0,
    )
    with pytest.raises((ParameterError, SingularityError)):
        assert_h_increasing(broken)


def test_es_from_expectile_zero_tau_is_identity():
    assert es_from_expectile(-1.7, 0.0, 0.05, 0.0) == pytest.approx(-1.7, rel=1e-15)


def test_es_from_expectile_normal_cross_check():
    spec = normal_spec()
    alpha = 0.05
    q = spec.quantile(alpha)
    tau = h_map(spec, alpha)
    es = es_from_expectile(q, tau, alpha, 0.0)
    assert es == pytest.approx(-2.0627, abs=1e-3)
    assert es == pytest.approx(es_alpha(spec, alpha), abs=1e-10)


def test_es_from_expectile_linear_in_location():
    one = es_from_expectile(-1.2, 0.0124, 0.05, 0.0)
    two = es_from_expectile(-2.4, 0.0124, 0.05, 0.0)
    assert two == pytest.approx(2.0 * one, rel=1e-12)


def test_es_from_expectile_input_validation():
    with pytest.raises(ParameterError):
        es_from_expectile(-1.0, 0.01, 0.05, 0.3)
    with pytest.raises(SingularityError):
        es_from_expectile(-1.0, 0.5, 0.05, 0.0)
    with pytest.raises(SingularityError):
        es_from_expectile(-1.0, 0.01, 0.0, 0.0)
    with pytest.raises(SingularityError):
        es_from_expectile(-1.0, 0.01, 1.0, 0.0)


def test_consistency_triangle_on_a_level_grid():
    # quantile -> matched expectile -> ES must equal the partial-moment ES
    specs = (normal_spec(), student_t_spec(5, scaled=True), uniform_spec())
    for spec in specs:
        for alpha in (0.01, 0.05, 0.1, 0.25):
            q = spec.quantile(alpha)
            tau = h_map(spec, alpha)
            lhs = es_from_expectile(q, tau, alpha, 0.0)
            assert lhs == pytest.approx(es_alpha(spec, alpha), abs=1e-8)


def test_c_epsilon_reference_values():
    assert c_epsilon(0.0, 0.05) == 1.0
    assert c_epsilon(0.25, 0.5) == pytest.approx(2.0, rel=1e-15)
    tau = h_map(normal_spec(), 0.05)
    assert c_epsilon(tau, 0.05) == pytest.approx(1.254, abs=1e-3)
    with pytest.raises(SingularityError):
        c_epsilon(0.5, 0.1)


def test_es_alpha_validates_level():
    with pytest.raises(ParameterError):
        es_alpha(normal_spec(), 0.0)
    with pytest.raises(ParameterError):
        es_alpha(normal_spec(), 1.5)


def test_student_t_requires_finite_variance():
    with pytest.raises(ParameterError):
        student_t_spec(2.0)


def test_uniform_requires_ordered_bounds():
    with pytest.raises(ParameterError):
        uniform_spec(1.0, -1.0)
