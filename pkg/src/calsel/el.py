"""Empirical-likelihood estimation of the expectile level matching a quantile.

Given residuals eps_1..eps_N and a target coverage alpha, the pair (mu, tau)
is estimated by minimizing the empirical-likelihood ratio

    l(mu, tau) = 2 sum_i log(1 + lambda' W_i),

where lambda solves sum_i W_i / (1 + lambda' W_i) = 0 and the two estimating
functions identify mu simultaneously as the alpha-quantile and the
tau-expectile:

    W_i1 = (eps_i - mu) 1(eps_i < mu) + [tau/(1-2tau)] (eps_i - mu)
    W_i2 = 1(eps_i < mu) - alpha.

l is discontinuous in mu at the order statistics, so the outer search probes
the order statistics with ranks in an alpha +- 4/sqrt(N) band plus midpoints.
For fixed mu the inner minimum over tau is available in closed form: the
two-constraint likelihood is bounded below by the coverage-only likelihood
(a binomial likelihood ratio in #{eps < mu}), and the bound is attained at
the tau that makes the coverage-only weights satisfy the expectile equation,
which is linear in tau/(1-2tau). Golden-section with full dual solves remains
as a fallback when that tau falls outside the admissible interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (
    EstimationFailureError,
    InfeasibilityError,
    InsufficientDataError,
    ParameterError,
    SingularityError,
)

__all__ = [
    "ElProblem",
    "ElSolution",
    "estimating_functions",
    "solve_lambda",
    "neg_log_el",
    "max_el_estimate",
    "grid_search_tau",
    "sample_expectile",
]

TAU_MIN = 1e-5
TAU_MAX = 0.5 - 1e-4
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class ElProblem:
    """Residual sample and target quantile level."""

    residuals: np.ndarray
    alpha: float
    min_obs: int = 30

    def __post_init__(self):
        object.__setattr__(
            self, "residuals", np.asarray(self.residuals, dtype=float).ravel()
        )
        n = len(self.residuals)
        if n < self.min_obs:
            raise InsufficientDataError(
                f"need at least {self.min_obs} residuals, got {n}"
            )
        if not np.all(np.isfinite(self.residuals)):
            raise ParameterError("residuals must be finite")
        if not 0.0 < self.alpha < 1.0 or self.alpha == 0.5:
            raise ParameterError(
                f"alpha must be in (0,1) excluding 0.5, got {self.alpha}"
            )


@dataclass(frozen=True)
class ElSolution:
    """Estimated (mu, tau), the dual multiplier, and the minimized ratio."""

    mu: float
    tau: float
    lam: np.ndarray
    logel: float
    feasible: bool
    boundary: bool = False
    fallback: bool = False

    def to_json_dict(self) -> dict:
        return {
            "mu": self.mu,
            "tau": self.tau,
            "lambda": np.asarray(self.lam, dtype=float).tolist(),
            "logel": self.logel,
            "feasible": self.feasible,
            "boundary_flag": self.boundary,
            "fallback": self.fallback,
        }


def estimating_functions(
    residuals: np.ndarray, mu: float, tau: float, alpha: float
) -> np.ndarray:
    """N x 2 matrix of the expectile and coverage estimating functions."""
    if tau == 0.5:
        raise SingularityError("tau = 0.5 leaves the expectile weight undefined")
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must be in (0,1), got {tau}")
    eps = np.asarray(residuals, dtype=float)
    ind = (eps < mu).astype(float)
    d = eps - mu
    ratio = tau / (1.0 - 2.0 * tau)
    w1 = d * ind + ratio * d
    w2 = ind - alpha
    return np.column_stack([w1, w2])


def _origin_in_hull(w: np.ndarray) -> bool:
    """Strict interior test for 0 in conv{w_i} in 2-D via angular gaps."""
    norms = np.hypot(w[:, 0], w[:, 1])
    nz = norms > 0
    if not np.any(nz):
        return True  # every row is 0; lambda = 0 solves trivially
    ang = np.sort(np.arctan2(w[nz, 1], w[nz, 0]))
    gaps = np.diff(ang)
    wrap = 2.0 * math.pi - (ang[-1] - ang[0])
    max_gap = max(gaps.max(initial=0.0), wrap)
    return max_gap < math.pi - 1e-10


def _log_star(z: np.ndarray, c: float):
    """log with a quadratic continuation below c, keeping concavity.

    Returns (value, first, second derivative) elementwise.
    """
    z = np.asarray(z, dtype=float)
    below = z < c
    val = np.empty_like(z)
    d1 = np.empty_like(z)
    d2 = np.empty_like(z)
    zs = np.where(below, c, z)  # avoid log of nonpositive values
    val[~below] = np.log(zs[~below])
    d1[~below] = 1.0 / zs[~below]
    d2[~below] = -1.0 / (zs[~below] * zs[~below])
    if np.any(below):
        zb = z[below]
        val[below] = math.log(c) - 1.5 + 2.0 * zb / c - zb * zb / (2.0 * c * c)
        d1[below] = 2.0 / c - zb / (c * c)
        d2[below] = -1.0 / (c * c)
    return val, d1, d2


def solve_lambda(w: np.ndarray, tol: float = 1e-10, max_iter: int = 80) -> np.ndarray:
    """Dual multiplier solving sum_i W_i/(1 + lambda' W_i) = 0.

    Damped Newton ascent on the concave dual with the log-star continuation
    below 1/N; at any feasible optimum the continuation is inactive. The
    convergence check is on the mean residual of the defining equation.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    if n == 0:
        raise ParameterError("empty estimating-function sample")
    if not _origin_in_hull(w):
        raise InfeasibilityError("zero outside the convex hull of the W sample")
    c = 1.0 / n
    lam = np.zeros(w.shape[1])
    for _ in range(max_iter):
        z = 1.0 + w @ lam
        val, d1, d2 = _log_star(z, c)
        grad = w.T @ d1
        if np.all(z > 0) and np.linalg.norm(w.T @ (1.0 / np.maximum(z, 1e-300)) / n) < tol:
            return lam
        hess = (w * d2[:, None]).T @ w
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = -grad
        cur = val.sum()
        t = 1.0
        improved = False
        for _ in range(50):
            cand = lam + t * step
            cval = _log_star(1.0 + w @ cand, c)[0].sum()
            if cval > cur + 1e-18:
                lam = cand
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    # The dual value saturates in double precision before the multiplier
    # does; polish the last digits by root-finding on the residual itself.
    for _ in range(40):
        z = 1.0 + w @ lam
        if not np.all(z > 0):
            break
        g = w.T @ (1.0 / z) / n
        gn = np.linalg.norm(g)
        if gn < tol:
            return lam
        jac = -(w / (z * z)[:, None]).T @ w / n
        try:
            delta = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        moved = False
        for _ in range(60):
            cand = lam + t * delta
            zc = 1.0 + w @ cand
            if np.all(zc > 0):
                gc = float(np.linalg.norm(w.T @ (1.0 / zc) / n))
                if gc < gn:
                    lam = cand
                    moved = True
                    break
            t *= 0.5
        if not moved:
            break
    z = 1.0 + w @ lam
    if np.all(z > 0) and np.linalg.norm(w.T @ (1.0 / z) / n) < tol:
        return lam
    raise EstimationFailureError("dual Newton did not reach the requested tolerance")


def neg_log_el(residuals: np.ndarray, mu: float, tau: float, alpha: float) -> float:
    """l(mu, tau) = 2 sum log(1 + lambda' W_i) at the solved multiplier."""
    w = estimating_functions(residuals, mu, tau, alpha)
    lam = solve_lambda(w)
    z = 1.0 + w @ lam
    return float(2.0 * np.sum(np.log(z)))


def _binomial_lr(count: int, n: int, alpha: float) -> float:
    out = 0.0
    if count > 0:
        out += count * math.log(count / (n * alpha))
    if count < n:
        out += (n - count) * math.log((n - count) / (n * (1.0 - alpha)))
    return 2.0 * out


def _golden_tau(eps, mu, alpha, lo=TAU_MIN, hi=TAU_MAX):
    """Coarse scan plus golden-section on tau for one candidate mu.

    Used only when the closed-form inner solution is inadmissible. Returns
    (l, tau) or None when every probed tau is infeasible.
    """

    def f(tau):
        try:
            return neg_log_el(eps, mu, tau, alpha)
        except (InfeasibilityError, EstimationFailureError):
            return math.inf

    grid = np.geomspace(lo, hi, 32)
    vals = [f(t) for t in grid]
    j = int(np.argmin(vals))
    if not math.isfinite(vals[j]):
        return None
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, len(grid) - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(60):
        if b - a < 1e-10:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = f(x2)
    tau = x1 if f1 <= f2 else x2
    fv = min(f1, f2)
    if not math.isfinite(fv):
        return None
    return fv, float(tau)


def max_el_estimate(problem: ElProblem) -> ElSolution:
    """Profile-search minimizer of l(mu, tau).

    Candidates for mu are the order statistics with ranks in
    [ceil(N(alpha - 4/sqrt(N))), floor(N(alpha + 4/sqrt(N)))] plus midpoints;
    ties are broken toward the smallest mu, then the smallest tau. Levels
    alpha > 0.5 are handled by reflection (negate residuals, solve at
    1 - alpha, negate mu back).
    """
    alpha = problem.alpha
    eps = problem.residuals
    reflected = alpha > 0.5
    if reflected:
        eps = -eps
        alpha = 1.0 - alpha

    n = len(eps)
    xs = np.sort(eps)
    root = 4.0 / math.sqrt(n)
    lo = max(1, math.ceil(n * (alpha - root)))
    hi = min(n, math.floor(n * (alpha + root)))
    if hi < lo:
        raise EstimationFailureError("empty candidate rank window")
    stats = xs[lo - 1: hi]
    mids = 0.5 * (stats[:-1] + stats[1:])
    cand = np.unique(np.concatenate([stats, mids]))

    counts = np.searchsorted(xs, cand, side="left")
    prefix = np.concatenate(([0.0], np.cumsum(xs)))
    total = prefix[-1]

    valid = (counts > 0) & (counts < n)
    best = None  # (l, mu, tau, lam, boundary, fallback)

    # Closed-form inner minimum where admissible.
    with np.errstate(divide="ignore", invalid="ignore"):
        a_sum = prefix[counts] - counts * cand
        b_sum = total - n * cand
        t1 = alpha / np.where(counts > 0, counts, 1) * a_sum
        t2 = t1 + (1.0 - alpha) / np.where(counts < n, n - counts, 1) * (b_sum - a_sum)
        r = np.where(np.abs(t2) > 0, -t1 / np.where(t2 != 0, t2, 1.0), np.nan)
        tau_star = r / (1.0 + 2.0 * r)
    interior = (
        valid
        & np.isfinite(tau_star)
        & (1.0 + 2.0 * r > 0)
        & (tau_star >= TAU_MIN)
        & (tau_star <= TAU_MAX)
    )

    for i in np.nonzero(interior)[0]:
        cnt = int(counts[i])
        l_val = _binomial_lr(cnt, n, alpha)
        if best is None or l_val < best[0] - 1e-12:
            lam2 = (cnt - n * alpha) / (n * alpha * (1.0 - alpha))
            best = (l_val, float(cand[i]), float(tau_star[i]), np.array([0.0, lam2]), False, False)

    # Fallback for candidates whose inner optimum is pinned by the tau bounds.
    for i in np.nonzero(valid & ~interior)[0]:
        res = _golden_tau(eps, float(cand[i]), alpha)
        if res is None:
            continue
        l_val, tau = res
        if best is None or l_val < best[0] - 1e-12:
            w = estimating_functions(eps, float(cand[i]), tau, alpha)
            lam = solve_lambda(w)
            at_edge = tau - TAU_MIN < BOUNDARY_TOL or TAU_MAX - tau < BOUNDARY_TOL
            best = (l_val, float(cand[i]), tau, lam, at_edge, True)

    if best is None:
        raise EstimationFailureError(
            f"no feasible (mu, tau) among {len(cand)} candidates "
            f"(N={n}, alpha={alpha}); residuals may be degenerate"
        )

    l_val, mu, tau, lam, boundary, fallback = best
    boundary = boundary or tau - TAU_MIN < BOUNDARY_TOL or TAU_MAX - tau < BOUNDARY_TOL
    if reflected:
        mu = -mu
    return ElSolution(
        mu=mu,
        tau=tau,
        lam=lam,
        logel=l_val,
        feasible=True,
        boundary=boundary,
        fallback=fallback,
    )


def _expectile_knots(xs: np.ndarray):
    n = len(xs)
    prefix = np.concatenate(([0.0], np.cumsum(xs)))
    total = prefix[-1]
    j = np.arange(n, dtype=float)
    below = j * xs - prefix[:-1]  # sum of (x_j - x_i) over i < j
    above = (total - prefix[:-1]) - (n - j) * xs  # sum over i >= j of (x_i - x_j)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(below + above > 0, below / (below + above), 0.0)
    return prefix, total, np.maximum.accumulate(ratio)


def _expectile_from_knots(prefix, total, ratio, taus):
    n = len(prefix) - 1
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    j = np.searchsorted(ratio, taus, side="right")  # count of points below solution
    num = taus * (total - prefix[j]) + (1.0 - taus) * prefix[j]
    den = taus * (n - j) + (1.0 - taus) * j
    return num / den


def sample_expectile(data: np.ndarray, tau: float) -> float:
    """Exact minimizer of the asymmetric squared loss over the sample.

    Solves the monotone first-order condition
    tau * sum (x - mu)_+ = (1 - tau) * sum (mu - x)_+ exactly on the
    piecewise-linear segment located by bisection over the sorted sample.
    """
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must be in (0,1), got {tau}")
    x = np.asarray(data, dtype=float).ravel()
    if len(x) == 0:
        raise ParameterError("empty sample")
    xs = np.sort(x)
    prefix, total, ratio = _expectile_knots(xs)
    return float(_expectile_from_knots(prefix, total, ratio, tau)[0])


def grid_search_tau(
    residuals: np.ndarray, alpha: float, step: float = 1e-4
) -> float:
    """Baseline: the grid tau whose sample expectile best matches the
    sample alpha-quantile; ties go to the smaller tau."""
    if not 0.0 < step <= 0.01:
        raise ParameterError(f"step must be in (0, 0.01], got {step}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must be in (0,1), got {alpha}")
    x = np.asarray(residuals, dtype=float).ravel()
    if len(x) == 0:
        raise ParameterError("empty sample")
    target = float(np.quantile(x, alpha))
    grid = np.arange(step, 1.0, step)
    grid = grid[(grid > 0.0) & (grid < 1.0)]
    xs = np.sort(x)
    prefix, total, ratio = _expectile_knots(xs)
    mus = _expectile_from_knots(prefix, total, ratio, grid)
    diffs = np.abs(mus - target)
    # ties (up to float noise in the expectile quotient) go to the smaller tau
    tol = 1e-12 * max(1.0, abs(target))
    return float(grid[int(np.argmax(diffs <= diffs.min() + tol))])
