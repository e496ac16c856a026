"""Closed-form bridges among quantiles, expectiles, and expected shortfall.

For a zero-mean law with cdf F, quantile function Q, and lower partial moment
G(q) = integral of t dF(t) over (-inf, q], the expectile level tau matching the
alpha-quantile is

    h(alpha) = (-alpha * Q_a + G(Q_a)) / (2 G(Q_a) + (1 - 2 alpha) * Q_a),

and the ES below the tau-expectile mu_tau is (1 + tau/((1-2tau) F(mu_tau))) mu_tau.
These functions are the accuracy reference for the estimators in the rest of
the package, so the built-in distributions use exact partial moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from .errors import ParameterError, SingularityError

__all__ = [
    "DistSpec",
    "normal_spec",
    "student_t_spec",
    "uniform_spec",
    "numeric_partial_moment",
    "h_map",
    "es_from_expectile",
    "c_epsilon",
    "es_alpha",
    "assert_h_increasing",
]


@dataclass(frozen=True)
class DistSpec:
    """A distribution described by the pieces the tail formulas need.

    quantile maps a level in (0,1) to Q_alpha; partial_moment maps q to
    G(q) = E[X 1(X <= q)]; cdf maps x to F(x). mean must be 0 for the
    expectile/ES identities used here.
    """

    name: str
    quantile: Callable[[float], float]
    partial_moment: Callable[[float], float]
    cdf: Callable[[float], float]
    mean: float = 0.0
    pdf: Optional[Callable[[float], float]] = None


def normal_spec() -> DistSpec:
    """Standard normal: G(q) = -phi(q)."""
    return DistSpec(
        name="normal",
        quantile=lambda a: float(stats.norm.ppf(a)),
        partial_moment=lambda q: float(-stats.norm.pdf(q)),
        cdf=lambda x: float(stats.norm.cdf(x)),
        mean=0.0,
        pdf=lambda x: float(stats.norm.pdf(x)),
    )


def student_t_spec(nu: float, scaled: bool = False) -> DistSpec:
    """Student t with nu > 2 dof; scaled=True rescales to unit variance.

    The raw-t partial moment is exact: G(q) = -f_nu(q) (nu + q^2)/(nu - 1),
    which differentiates back to q f_nu(q). Scaling by s multiplies G and Q
    by s and rescales their arguments.
    """
    if nu <= 2:
        raise ParameterError(f"student t needs nu > 2 for finite variance, got {nu}")
    s = math.sqrt((nu - 2.0) / nu) if scaled else 1.0
    base = stats.t(df=nu)

    def partial_moment(q: float) -> float:
        z = q / s
        return float(s * (-base.pdf(z) * (nu + z * z) / (nu - 1.0)))

    return DistSpec(
        name=f"t{nu:g}" + ("-scaled" if scaled else ""),
        quantile=lambda a: float(s * base.ppf(a)),
        partial_moment=partial_moment,
        cdf=lambda x: float(base.cdf(x / s)),
        mean=0.0,
        pdf=lambda x: float(base.pdf(x / s) / s),
    )


def uniform_spec(a: float = -1.0, b: float = 1.0) -> DistSpec:
    """Uniform on (a, b); zero mean requires b = -a. G(q) = (q^2 - a^2)/(2(b-a))."""
    if not b > a:
        raise ParameterError("uniform needs b > a")
    width = b - a

    def partial_moment(q: float) -> float:
        qc = min(max(q, a), b)
        return (qc * qc - a * a) / (2.0 * width)

    return DistSpec(
        name=f"uniform({a:g},{b:g})",
        quantile=lambda al: a + al * width,
        partial_moment=partial_moment,
        cdf=lambda x: min(max((x - a) / width, 0.0), 1.0),
        mean=(a + b) / 2.0,
        pdf=lambda x: (1.0 / width) if a <= x <= b else 0.0,
    )


def numeric_partial_moment(pdf: Callable[[float], float], q: float) -> float:
    """G(q) by adaptive quadrature over (-inf, q], abs tolerance 1e-10.

    Fallback for distributions without a closed-form partial moment.
    """
    val, _err = integrate.quad(lambda t: t * pdf(t), -np.inf, q, epsabs=1e-10, limit=400)
    return float(val)


def h_map(dist: DistSpec, alpha: float) -> float:
    """Expectile level tau whose expectile equals the alpha-quantile.

    Requires a zero-mean distribution. Raises SingularityError when the
    denominator vanishes.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must be in (0,1), got {alpha}")
    if abs(dist.mean) > 1e-12:
        raise ParameterError("h_map requires a zero-mean distribution")
    q = dist.quantile(alpha)
    g = dist.partial_moment(q)
    den = 2.0 * g + (1.0 - 2.0 * alpha) * q
    if abs(den) < 1e-300:
        raise SingularityError("zero denominator in the quantile-to-expectile map")
    tau = (-alpha * q + g) / den
    if not 0.0 < tau < 1.0:
        raise SingularityError(f"mapped level {tau} outside (0,1); input law unsuitable")
    return tau


def es_from_expectile(mu_tau: float, tau: float, f_at_mu: float, mean: float) -> float:
    """ES below the tau-expectile: (1 + tau/((1-2tau) F(mu_tau))) mu_tau.

    mean must be 0 (the identity is stated for centered laws); f_at_mu is
    F(mu_tau), the probability mass below the expectile.
    """
    if abs(mean) > 1e-12:
        raise ParameterError("es_from_expectile requires mean 0")
    if tau == 0.5:
        raise SingularityError("tau = 0.5 makes the expectile factor undefined")
    if not 0.0 < f_at_mu < 1.0:
        raise SingularityError(f"F(mu_tau) must be in (0,1), got {f_at_mu}")
    return (1.0 + tau / ((1.0 - 2.0 * tau) * f_at_mu)) * mu_tau


def c_epsilon(tau: float, alpha: float) -> float:
    """ES/VaR multiplier 1 + tau/((1-2tau) alpha)."""
    if tau == 0.5:
        raise SingularityError("tau = 0.5 makes the multiplier undefined")
    return 1.0 + tau / ((1.0 - 2.0 * tau) * alpha)


def es_alpha(dist: DistSpec, alpha: float) -> float:
    """Lower-tail ES of a continuous law: G(Q_alpha)/alpha."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must be in (0,1), got {alpha}")
    q = dist.quantile(alpha)
    return dist.partial_moment(q) / alpha


def assert_h_increasing(dist: DistSpec, levels: Optional[np.ndarray] = None) -> None:
    """Verify h_map is strictly increasing over a level grid; raises otherwise.

    Intended for user-supplied DistSpecs, whose partial moments are not
    guaranteed to be consistent with their quantile functions.
    """
    if levels is None:
        levels = np.linspace(0.01, 0.99, 99)
    taus = [h_map(dist, float(a)) for a in levels]
    diffs = np.diff(taus)
    if not np.all(diffs > 0):
        k = int(np.argmin(diffs))
        raise ParameterError(
            f"quantile-to-expectile map not increasing between levels "
            f"{levels[k]:.4f} and {levels[k + 1]:.4f}"
        )
