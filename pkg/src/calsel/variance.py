"""Plug-in asymptotic variance estimators.

Sandwich covariance for the sieve fit, the delta-method covariance of the
least-squares volatility refit, the covariance of the level-matching
estimates, and standard errors for the one-step risk forecasts.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, TYPE_CHECKING

import numpy as np

from .cals import RefitCoeffs, SieveConfig, SieveFit, VolatilityPath, build_design, preliminary_volatility, refined_forecast
from .el import ElSolution
from .errors import ParameterError, RankDeficiencyError, SingularityError

if TYPE_CHECKING:  # pragma: no cover
    from .risks import RiskForecast, RollingConfig

__all__ = [
    "SandwichParts",
    "RefitVariance",
    "cals_sandwich",
    "garch_refit_variance",
    "el_variance",
    "risk_forecast_variance",
    "forecast_stderrs",
    "kde_density_at",
]

DENSITY_FLOOR = 1e-6


@dataclass(frozen=True)
class SandwichParts:
    """Hessian-type matrix, score variance, and their sandwich product.

    All matrices live on the free parameter axis (K expectile locations
    followed by the m sieve lag coefficients; the pinned intercept is
    excluded). xi22 re-embeds the lag block into the (m+1)-dim coefficient
    axis with a zero row/column for the pinned intercept.
    """

    sigma_matrix: np.ndarray
    omega: np.ndarray
    xi: np.ndarray
    xi22: np.ndarray
    pinv_used: bool = False


@dataclass(frozen=True)
class RefitVariance:
    """Delta-method covariance pieces for the volatility refit."""

    gamma10: np.ndarray
    gamma20: np.ndarray
    xi_phi: np.ndarray
    cond_gamma10: float


def _weights_matrix(v: np.ndarray, taus: np.ndarray) -> np.ndarray:
    return np.where(v <= 0, 1.0 - taus[None, :], taus[None, :])


def cals_sandwich(
    fit: SieveFit,
    returns: np.ndarray,
    config: Optional[SieveConfig] = None,
    hac_lags: int = 0,
) -> SandwichParts:
    """Sandwich covariance of the sieve fit at its estimate.

    The bread is the outer-product form sum_k 2 w_k xi_k xi_k' with
    xi_k = d(u_k sigma_t)/dtheta, which is nonnegative definite by
    construction; the meat is the sample variance of the per-date score,
    optionally Bartlett-smoothed over ``hac_lags`` lags.
    """
    if config is None:
        config = SieveConfig(m=fit.m, tau_grid=fit.tau_grid)
    y = np.asarray(returns, dtype=float)
    m = fit.m
    k = len(fit.tau_grid)
    x = build_design(y, m)
    x_lags = x[:, 1:]
    yt = y[m:]
    n = len(yt)
    u = fit.vartheta
    a = fit.eta[1:]
    taus = fit.tau_grid

    s = x @ fit.eta
    v = yt[:, None] - s[:, None] * u[None, :]
    w = _weights_matrix(v, taus)

    nf = k + m
    sigma = np.zeros((nf, nf))
    ss = s * s
    sigma[np.arange(k), np.arange(k)] = 2.0 * (w.T @ ss) / n
    if m:
        # cross blocks of 2 w_k xi xi': xi = (s e_k, u_k x_t)
        cross = 2.0 * (w * s[:, None]).T @ (x_lags) / n  # (K, m) before u_k scale
        sigma[:k, k:] = cross * u[:, None]
        sigma[k:, :k] = sigma[:k, k:].T
        d = w @ (u * u)
        sigma[k:, k:] = 2.0 * (x_lags.T @ (d[:, None] * x_lags)) / n

    # per-date score psi_t: u-block -2 w v s, a-block (sum_k -2 w v u_k) x_t
    core = -2.0 * w * v
    psi = np.empty((n, nf))
    psi[:, :k] = core * s[:, None]
    if m:
        psi[:, k:] = (core @ u)[:, None] * x_lags
    psi_c = psi - psi.mean(axis=0)
    omega = (psi_c.T @ psi_c) / n
    if hac_lags > 0:
        for lag in range(1, hac_lags + 1):
            wgt = 1.0 - lag / (hac_lags + 1.0)
            g = (psi_c[lag:].T @ psi_c[:-lag]) / n
            omega = omega + wgt * (g + g.T)

    pinv_used = False
    try:
        xi = np.linalg.solve(sigma, np.linalg.solve(sigma, omega).T)
    except np.linalg.LinAlgError:
        pinv_used = True
        sp = np.linalg.pinv(sigma)
        xi = sp @ omega @ sp
    xi = 0.5 * (xi + xi.T)

    xi22 = np.zeros((m + 1, m + 1))
    if m:
        xi22[1:, 1:] = xi[k:, k:]
    return SandwichParts(
        sigma_matrix=sigma, omega=omega, xi=xi, xi22=xi22, pinv_used=pinv_used
    )


def _refit_design(
    prelim: VolatilityPath, returns: np.ndarray, phi: RefitCoeffs
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Regressor matrix z_t and usable date range of the refit."""
    y = np.asarray(returns, dtype=float)
    n = len(y)
    p, q = phi.p, phi.q
    start = prelim.start
    t0 = max(start + p, q)
    rows = n - t0
    z = np.empty((rows, 1 + q + p))
    z[:, 0] = 1.0
    ab = np.abs(y)
    for j in range(1, q + 1):
        z[:, j] = ab[t0 - j: n - j]
    sig = prelim.values
    for i in range(1, p + 1):
        z[:, q + i] = sig[t0 - i - start: n - i - start]
    return z, ab, t0


def garch_refit_variance(
    phi: RefitCoeffs,
    prelim: VolatilityPath,
    returns: np.ndarray,
    xi22: np.ndarray,
) -> RefitVariance:
    """Covariance of the refit coefficients induced by the sieve estimate.

    gamma10 is the second moment of the refit regressors; gamma20 carries
    the sensitivity of the refit estimating equation to the sieve
    coefficients (the direct term minus the feedback through lagged
    volatilities).
    """
    y = np.asarray(returns, dtype=float)
    m = prelim.start
    p, q = phi.p, phi.q
    z, ab, t0 = _refit_design(prelim, returns, phi)
    rows = len(z)
    if rows <= 1 + p + q:
        raise ParameterError("too few refit rows for a covariance estimate")

    gamma10 = (z.T @ z) / rows
    cond = float(np.linalg.cond(gamma10))
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficiencyError(
            f"refit regressor moment matrix near-singular (cond {cond:.2e})"
        )

    # d sigma~_t / d eta = x_{t,(m)}; estimating-equation sensitivity is
    # x_t - sum_i beta_i x_{t-i}
    x = build_design(y, m)  # row r corresponds to date m + r
    betas = np.asarray(phi.betas)
    sens = x[t0 - m:].copy()
    for i in range(1, p + 1):
        sens -= betas[i - 1] * x[t0 - m - i: len(x) - i]
    gamma20 = (z.T @ sens) / rows

    if xi22.shape != (m + 1, m + 1):
        raise ParameterError(
            f"xi22 must be {(m + 1, m + 1)} for m={m}, got {xi22.shape}"
        )
    b = np.linalg.solve(gamma10, gamma20)
    xi_phi = b @ xi22 @ b.T
    xi_phi = 0.5 * (xi_phi + xi_phi.T)
    return RefitVariance(gamma10=gamma10, gamma20=gamma20, xi_phi=xi_phi, cond_gamma10=cond)


def kde_density_at(sample: np.ndarray, point: float) -> float:
    """Gaussian-kernel density estimate at one point, Silverman bandwidth."""
    x = np.asarray(sample, dtype=float).ravel()
    n = len(x)
    if n < 2:
        raise ParameterError("need at least 2 points for a density estimate")
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = max(0.9 * spread * n ** (-0.2), 1e-6)
    zs = (point - x) / h
    val = float(np.mean(np.exp(-0.5 * zs * zs))) / (h * np.sqrt(2.0 * np.pi))
    return val


def el_variance(
    el: ElSolution,
    residuals: np.ndarray,
    alpha: float,
    density_bandwidth: Optional[float] = None,
) -> np.ndarray:
    """Finite-sample covariance of the location/level pair (mu, tau).

    Assembled from the estimating-function second moments and the
    Jacobian built with the empirical CDF and a kernel density value at
    mu. The score variance uses the exact alpha(1-alpha) for the
    indicator component.
    """
    if not el.feasible:
        raise ParameterError("need a feasible level-matching solution")
    tau, mu = el.tau, el.mu
    if tau == 0.0:
        raise ParameterError("tau must be nonzero")
    eps = np.asarray(residuals, dtype=float).ravel()
    n = len(eps)
    if n < 10:
        raise ParameterError("too few residuals for a covariance estimate")

    below = eps < mu
    f_hat = float(np.mean(below))
    r = 1.0 - 2.0 * tau
    w1 = (eps - mu) * below + (tau / r) * (eps - mu)
    w2 = below.astype(float) - alpha
    s11 = float(np.mean(w1 * w1))
    s12 = float(np.mean(w1 * w2))
    s22 = alpha * (1.0 - alpha)
    sigma0 = np.array([[s11, s12], [s12, s22]])

    if density_bandwidth is None:
        dens = kde_density_at(eps, mu)
    else:
        if density_bandwidth <= 0:
            raise ParameterError("density_bandwidth must be positive")
        zs = (mu - eps) / density_bandwidth
        dens = float(np.mean(np.exp(-0.5 * zs * zs))) / (
            density_bandwidth * np.sqrt(2.0 * np.pi)
        )
    if dens < DENSITY_FLOOR:
        raise SingularityError(
            f"density at mu below floor ({dens:.2e}); covariance not identified"
        )
    sigma1 = np.array([[-(f_hat + tau / r), -mu / (r * r)], [dens, 0.0]])
    det = sigma1[0, 0] * sigma1[1, 1] - sigma1[0, 1] * sigma1[1, 0]
    if abs(det) < 1e-14:
        raise SingularityError("Jacobian of the estimating equations is singular")
    inv1 = np.linalg.solve(sigma1, np.eye(2))
    cov = inv1 @ sigma0 @ inv1.T / n
    return 0.5 * (cov + cov.T)


def _lambda_rows(
    el: ElSolution,
    residuals: np.ndarray,
    alpha: float,
    phi: RefitCoeffs,
    z: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sensitivity rows mapping refit-coefficient noise into (Q, ES) noise."""
    eps = np.asarray(residuals, dtype=float).ravel()
    tau, mu = el.tau, el.mu
    r = 1.0 - 2.0 * tau
    f_at = float(np.mean(eps < mu))
    dens = kde_density_at(eps, mu)
    e1 = f_at + tau / r
    e2 = dens
    e3 = 1.0 + tau / (r * alpha)
    e4 = (mu - float(np.mean(eps))) / (alpha * r * r)

    sigma1 = np.array([[-(e1), -mu / (r * r)], [e2, 0.0]])
    rhs = np.array([e1, e2])
    try:
        core = np.linalg.solve(sigma1, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"singular Jacobian in forecast variance: {exc}") from exc
    # sigma2 = mean of z_t eps_t / (phi' z_t)
    denom = z @ np.concatenate([[phi.beta0], phi.gammas, phi.betas])
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    sigma2 = (z * (eps / denom)[:, None]).mean(axis=0)
    lam1 = float(np.array([1.0, 0.0]) @ core) * sigma2
    lam2 = float(np.array([e3, e4]) @ core) * sigma2
    return lam1, lam2


def risk_forecast_variance(
    parts: SandwichParts,
    refit_var: RefitVariance,
    el: ElSolution,
    residuals: np.ndarray,
    alpha: float,
    phi: RefitCoeffs,
    z_rows: np.ndarray,
    z_T: np.ndarray,
    sigma_T: float,
    q_eps: float,
    es_eps: float,
) -> Tuple[float, float]:
    """Standard errors of the one-step VaR and ES forecasts.

    Combines the variance of the volatility prediction with the variance
    of the innovation-level risks and their covariance, all propagated
    through the refit-coefficient covariance. Negative plug-in variances
    are floored at zero.
    """
    eps = np.asarray(residuals, dtype=float).ravel()
    n = len(eps)
    lam1, lam2 = _lambda_rows(el, eps, alpha, phi, z_rows)
    xi_phi = refit_var.xi_phi

    def avar(level: float, lam: np.ndarray) -> float:
        a = sigma_T ** 2 * float(lam @ xi_phi @ lam)
        b = level ** 2 * float(z_T @ xi_phi @ z_T)
        c = 2.0 * sigma_T * level * float(lam @ xi_phi @ z_T)
        return a + b + c

    av_q = max(avar(q_eps, lam1), 0.0)
    av_e = max(avar(es_eps, lam2), 0.0)
    return float(np.sqrt(av_q / n)), float(np.sqrt(av_e / n))


def forecast_stderrs(
    fit: SieveFit,
    phi: RefitCoeffs,
    el: ElSolution,
    window_returns: np.ndarray,
    config: "RollingConfig",
) -> Tuple[float, float]:
    """Convenience wrapper: all variance pieces for one forecast window.

    Expects the same (possibly sign-flipped) returns the pipeline was fit
    on; standard errors are invariant to that reflection.
    """
    from .risks import estimate_innovation_risks

    y = np.asarray(window_returns, dtype=float).ravel()
    alpha = config.alpha_effective
    parts = cals_sandwich(fit, y, config.sieve)
    prelim = preliminary_volatility(fit, y)
    refit_var = garch_refit_variance(phi, prelim, y, parts.xi22)

    z_rows, ab, t0 = _refit_design(prelim, y, phi)
    fitted = z_rows @ np.concatenate([[phi.beta0], phi.gammas, phi.betas])
    floor = prelim.floor
    sig_hat = np.maximum(fitted, floor)
    resid = y[t0:] / sig_hat

    q_eps, es_eps = estimate_innovation_risks(resid, el, alpha)
    sigma_T = refined_forecast(phi, prelim, y)

    n = len(y)
    p, q = phi.p, phi.q
    z_T = np.empty(1 + q + p)
    z_T[0] = 1.0
    for j in range(1, q + 1):
        z_T[j] = abs(y[n - j])
    for i in range(1, p + 1):
        z_T[q + i] = prelim.values[n - i - prelim.start]
    return risk_forecast_variance(
        parts,
        refit_var,
        el,
        resid,
        alpha,
        phi,
        z_rows,
        z_T,
        sigma_T,
        q_eps,
        es_eps,
    )
