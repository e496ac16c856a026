"""Conditional tail-risk estimation and forecasting.

Combines the sieve volatility fit, the least-squares refit, and the
empirical-likelihood level matching into one-step-ahead VaR/ES
forecasts, plus a rolling driver that emits an aligned forecast series
for backtesting.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cals import (
    RefitCoeffs,
    SieveConfig,
    SieveFit,
    VolatilityPath,
    fit_cals,
    preliminary_forecast,
    preliminary_volatility,
    refined_forecast,
    refit_garch,
)
from .el import ElProblem, ElSolution, grid_search_tau, max_el_estimate, sample_expectile
from .errors import (
    CalselError,
    EstimationFailureError,
    InfeasibilityError,
    InsufficientDataError,
    ParameterError,
)

__all__ = [
    "RiskForecast",
    "RollingConfig",
    "innovation_residuals",
    "estimate_innovation_risks",
    "forecast_one_step",
    "rolling_forecast",
]


@dataclass(frozen=True)
class RiskForecast:
    """One-step-ahead forecast bundle for a single date.

    var/es pairs come in two flavours: *tilde* uses the direct sieve
    volatility prediction, *hat* the refit-based one. Both share the
    same innovation-level quantile (mu_hat at level tau_hat) and ES.
    """

    date_index: int
    var_tilde: float
    es_tilde: float
    var_hat: float
    es_hat: float
    sigma_tilde: float
    sigma_hat: float
    tau_hat: float
    mu_hat: float
    stderr_var: Optional[float] = None
    stderr_es: Optional[float] = None
    flags: Tuple[str, ...] = ()

    @property
    def skipped(self) -> bool:
        return not np.isfinite(self.var_hat)

    def to_json_dict(self) -> dict:
        out = {
            "date_index": self.date_index,
            "var_tilde": self.var_tilde,
            "es_tilde": self.es_tilde,
            "var_hat": self.var_hat,
            "es_hat": self.es_hat,
            "sigma_tilde": self.sigma_tilde,
            "sigma_hat": self.sigma_hat,
            "tau_hat": self.tau_hat,
            "mu_hat": self.mu_hat,
            "flags": list(self.flags),
        }
        if self.stderr_var is not None:
            out["stderr_var"] = self.stderr_var
        if self.stderr_es is not None:
            out["stderr_es"] = self.stderr_es
        return out


def _check_tail_alpha(tail: str, alpha: float) -> None:
    if tail not in ("lower", "upper"):
        raise ParameterError(f"tail must be 'lower' or 'upper', got {tail!r}")
    if tail == "lower" and not 0.0 < alpha < 0.5:
        raise ParameterError(f"lower tail needs alpha in (0, 0.5), got {alpha}")
    if tail == "upper" and not 0.5 < alpha < 1.0:
        raise ParameterError(f"upper tail needs alpha in (0.5, 1), got {alpha}")


@dataclass(frozen=True)
class RollingConfig:
    """Knobs for one-step forecasting over moving windows."""

    window: int = 500
    alpha: float = 0.05
    tail: str = "lower"
    sieve: SieveConfig = field(default_factory=SieveConfig)
    p: int = 1
    q: int = 1
    refit_every: Optional[int] = 1  # None: fit once on the first window
    el_fallback: bool = True
    use_refined_residuals: bool = True
    compute_stderr: bool = False

    def __post_init__(self):
        if self.window <= self.sieve.m + 50:
            raise ParameterError(
                f"window must exceed m + 50 = {self.sieve.m + 50}, got {self.window}"
            )
        _check_tail_alpha(self.tail, self.alpha)
        if self.p < 1 or self.q < 1:
            raise ParameterError("refit orders need p >= 1 and q >= 1")
        if self.refit_every is not None and self.refit_every < 1:
            raise ParameterError("refit_every must be >= 1 or None")

    @property
    def alpha_effective(self) -> float:
        """Lower-tail level actually estimated (reflection for upper)."""
        return self.alpha if self.tail == "lower" else 1.0 - self.alpha


def innovation_residuals(returns: np.ndarray, vol: VolatilityPath) -> np.ndarray:
    """Standardized residuals eps_t = Y_t / sigma_t over the path's dates."""
    y = np.asarray(returns, dtype=float)
    vals = vol.values
    if len(vals) != len(y) - vol.start:
        raise ParameterError(
            f"volatility path ({len(vals)} values from {vol.start}) does not "
            f"align with {len(y)} returns"
        )
    floor = vol.floor if vol.floor > 0 else np.finfo(float).tiny
    return y[vol.start:] / np.maximum(vals, floor)


def estimate_innovation_risks(
    residuals: np.ndarray, el: ElSolution, alpha: float
) -> Tuple[float, float]:
    """Innovation-level quantile and expected shortfall from an EL solution.

    The quantile estimate is the matched expectile mu itself; the ES adds
    the tail-mass correction plus a term recentering by the sample mean of
    the residuals (exact when that mean is zero).
    """
    if not el.feasible:
        raise ParameterError("need a feasible level-matching solution")
    tau = el.tau
    if not 0.0 < tau < 0.5:
        raise ParameterError(f"tau must be in (0, 0.5), got {tau}")
    if not 0.0 < alpha < 1.0 or alpha == 0.5:
        raise ParameterError(f"alpha must be in (0,1) excluding 0.5, got {alpha}")
    eps = np.asarray(residuals, dtype=float).ravel()
    n = len(eps)
    if n == 0:
        raise ParameterError("empty residual sample")
    q = el.mu
    coef = tau / ((1.0 - 2.0 * tau) * alpha)
    es = (1.0 + coef) * q - (coef / n) * float(np.sum(eps))
    return q, es


def _solve_level_match(
    residuals: np.ndarray, alpha: float, el_fallback: bool
) -> Tuple[ElSolution, Tuple[str, ...]]:
    """EL level matching with the grid-search fallback path."""
    flags: Tuple[str, ...] = ()
    try:
        sol = max_el_estimate(ElProblem(residuals=residuals, alpha=alpha))
    except (EstimationFailureError, InfeasibilityError) as exc:
        if not el_fallback:
            raise EstimationFailureError(f"stage=el: {exc}") from exc
        tau = grid_search_tau(residuals, alpha)
        if not 0.0 < tau < 0.5:
            raise EstimationFailureError(
                f"stage=el: fallback tau {tau} outside (0, 0.5)"
            ) from exc
        mu = sample_expectile(np.asarray(residuals, dtype=float), tau)
        sol = ElSolution(
            mu=float(mu),
            tau=float(tau),
            lam=np.zeros(2),
            logel=float("nan"),
            feasible=True,
            boundary=False,
            fallback=True,
        )
    if sol.fallback:
        flags = flags + ("el_fallback",)
    if sol.boundary:
        flags = flags + ("el_boundary",)
    return sol, flags


def _stage(name: str, exc: CalselError) -> CalselError:
    return type(exc)(f"stage={name}: {exc}")


@dataclass(frozen=True)
class _WindowFit:
    """Cached estimation state reused between refits."""

    fit: SieveFit
    phi: RefitCoeffs
    el: ElSolution
    q_eps: float
    es_eps: float
    flags: Tuple[str, ...]


def _fit_window(y: np.ndarray, config: RollingConfig) -> _WindowFit:
    alpha = config.alpha_effective
    try:
        fit = fit_cals(y, config.sieve)
    except CalselError as exc:
        raise _stage("cals", exc) from exc
    if not fit.converged:
        raise EstimationFailureError("stage=cals: solver did not converge")
    prelim = preliminary_volatility(fit, y)
    try:
        phi, refined = refit_garch(prelim, y, config.p, config.q)
    except CalselError as exc:
        raise _stage("refit", exc) from exc
    vol = refined if config.use_refined_residuals else prelim
    resid = innovation_residuals(y, vol)
    try:
        el, flags = _solve_level_match(resid, alpha, config.el_fallback)
        q_eps, es_eps = estimate_innovation_risks(resid, el, alpha)
    except CalselError as exc:
        raise _stage("el", exc) from exc
    return _WindowFit(fit=fit, phi=phi, el=el, q_eps=q_eps, es_eps=es_eps, flags=flags)


def _forecast_from_state(
    state: _WindowFit, y: np.ndarray, config: RollingConfig, date_index: int
) -> RiskForecast:
    """Volatility predictions from cached coefficients plus fresh data."""
    prelim = preliminary_volatility(state.fit, y)
    sigma_tilde = preliminary_forecast(state.fit, y)
    sigma_hat = refined_forecast(state.phi, prelim, y)
    flags = state.flags
    if sigma_tilde <= prelim.floor or sigma_hat <= prelim.floor:
        flags = flags + ("sigma_floor",)
    fc = RiskForecast(
        date_index=date_index,
        var_tilde=sigma_tilde * state.q_eps,
        es_tilde=sigma_tilde * state.es_eps,
        var_hat=sigma_hat * state.q_eps,
        es_hat=sigma_hat * state.es_eps,
        sigma_tilde=sigma_tilde,
        sigma_hat=sigma_hat,
        tau_hat=state.el.tau,
        mu_hat=state.el.mu,
        flags=flags,
    )
    if config.compute_stderr:
        from .variance import forecast_stderrs

        try:
            se_var, se_es = forecast_stderrs(state.fit, state.phi, state.el, y, config)
            fc = replace(fc, stderr_var=se_var, stderr_es=se_es)
        except CalselError:
            fc = replace(fc, flags=fc.flags + ("stderr_failed",))
    return fc


def _reflect(fc: RiskForecast) -> RiskForecast:
    """Map a lower-tail forecast on -Y back to the upper tail of Y."""
    return replace(
        fc,
        var_tilde=-fc.var_tilde,
        es_tilde=-fc.es_tilde,
        var_hat=-fc.var_hat,
        es_hat=-fc.es_hat,
        mu_hat=-fc.mu_hat,
    )


def forecast_one_step(
    window_returns: np.ndarray,
    config: Optional[RollingConfig] = None,
    date_index: Optional[int] = None,
) -> RiskForecast:
    """Full pipeline on one window: sieve fit, refit, level matching, forecast.

    Upper-tail configs negate the returns, run the lower-tail pipeline at
    1 - alpha, and negate the risk outputs back.
    """
    if config is None:
        config = RollingConfig()
    y = np.asarray(window_returns, dtype=float).ravel()
    if len(y) != config.window:
        raise ParameterError(
            f"window length {len(y)} does not match config.window {config.window}"
        )
    if not np.all(np.isfinite(y)):
        raise ParameterError("returns must be finite")
    idx = len(y) if date_index is None else int(date_index)
    work = y if config.tail == "lower" else -y
    state = _fit_window(work, config)
    fc = _forecast_from_state(state, work, config, idx)
    return fc if config.tail == "lower" else _reflect(fc)


def _skipped_forecast(date_index: int, reason: str) -> RiskForecast:
    nan = float("nan")
    return RiskForecast(
        date_index=date_index,
        var_tilde=nan,
        es_tilde=nan,
        var_hat=nan,
        es_hat=nan,
        sigma_tilde=nan,
        sigma_hat=nan,
        tau_hat=nan,
        mu_hat=nan,
        flags=("skipped", reason),
    )


def rolling_forecast(
    returns: np.ndarray,
    config: Optional[RollingConfig] = None,
) -> Tuple[List[RiskForecast], np.ndarray]:
    """One-step forecasts for every date from window to the end of the series.

    The estimation state (sieve fit, refit coefficients, matched level) is
    recomputed every ``refit_every`` steps and reused in between; volatility
    predictions always use the newest window of data. Failed windows are
    recorded as skipped forecasts and the run continues.

    Returns the forecast list and the tau series (NaN where skipped).
    """
    if config is None:
        config = RollingConfig()
    y = np.asarray(returns, dtype=float).ravel()
    n = len(y)
    w = config.window
    if n < w + 1:
        raise InsufficientDataError(f"need at least window + 1 = {w + 1} points, got {n}")
    if not np.all(np.isfinite(y)):
        raise ParameterError("returns must be finite")

    work = y if config.tail == "lower" else -y
    out: List[RiskForecast] = []
    state: Optional[_WindowFit] = None
    for step, t in enumerate(range(w, n)):
        win = work[t - w: t]
        needs_refit = state is None or (
            config.refit_every is not None and step % config.refit_every == 0
        )
        try:
            if needs_refit:
                state = _fit_window(win, config)
            fc = _forecast_from_state(state, win, config, t)
            if config.tail == "upper":
                fc = _reflect(fc)
        except CalselError as exc:
            fc = _skipped_forecast(t, str(exc))
            if config.refit_every is not None:
                state = None  # force a refit attempt on the next window
        out.append(fc)
    taus = np.array([f.tau_hat for f in out])
    return out, taus
