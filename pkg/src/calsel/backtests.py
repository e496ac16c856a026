"""Forecast evaluation: hit series, unconditional coverage, dynamic quantile
regression, and a bootstrap test for the expected-shortfall level.

All tests work on an exceedance event with explicit probability ``alpha_exc``:
for a lower-tail forecast at level alpha the event is Y_t <= VaR_t and
alpha_exc = alpha; for an upper-tail forecast at level alpha it is
Y_t >= VaR_t and alpha_exc = 1 - alpha.  The centered hit variable is
I(event) - alpha_exc, so a correctly sized forecast gives hits with mean zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, ParameterError

__all__ = [
    "BacktestInput",
    "BacktestReport",
    "DqResult",
    "EsBootstrapResult",
    "hit_series",
    "kupiec_test",
    "dq_test",
    "es_bootstrap_test",
    "run_backtest",
]

DQ_HIT_LAGS = 4
COND_LIMIT = 1e12


def _as_series(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def _check_tail_level(alpha: float, tail: str) -> None:
    if tail not in ("lower", "upper"):
        raise ParameterError(f"tail must be 'lower' or 'upper', got {tail!r}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if tail == "lower" and alpha >= 0.5:
        raise ParameterError("lower-tail backtests need alpha < 0.5")
    if tail == "upper" and alpha <= 0.5:
        raise ParameterError("upper-tail backtests need alpha > 0.5")


@dataclass(frozen=True)
class BacktestInput:
    """Aligned realized returns and one-step-ahead forecasts.

    Forecasts must be formed from information strictly before each date
    (no look-ahead); that alignment is the caller's responsibility.
    ``sigma_forecasts`` is optional and only used to standardize the
    shortfall excesses; without it the raw-excess variant runs.
    """

    realized: np.ndarray
    var_forecasts: np.ndarray
    es_forecasts: np.ndarray
    alpha: float
    tail: str = "lower"
    sigma_forecasts: Optional[np.ndarray] = None

    def __post_init__(self):
        realized = _as_series(self.realized, "realized")
        var_f = _as_series(self.var_forecasts, "var_forecasts")
        es_f = _as_series(self.es_forecasts, "es_forecasts")
        if not realized.size:
            raise ParameterError("backtest input is empty")
        if realized.size != var_f.size or realized.size != es_f.size:
            raise ParameterError("realized and forecast series lengths differ")
        _check_tail_level(self.alpha, self.tail)
        sigma = self.sigma_forecasts
        if sigma is not None:
            sigma = _as_series(sigma, "sigma_forecasts")
            if sigma.size != realized.size:
                raise ParameterError("sigma_forecasts length differs")
            if np.any(sigma <= 0.0):
                raise ParameterError("sigma_forecasts must be positive")
        object.__setattr__(self, "realized", realized)
        object.__setattr__(self, "var_forecasts", var_f)
        object.__setattr__(self, "es_forecasts", es_f)
        object.__setattr__(self, "sigma_forecasts", sigma)

    @property
    def alpha_exc(self) -> float:
        """Probability of the exceedance event under a correct forecast."""
        return self.alpha if self.tail == "lower" else 1.0 - self.alpha

    @property
    def n_obs(self) -> int:
        return self.realized.size


def exceedance_indicator(inp: BacktestInput) -> np.ndarray:
    if inp.tail == "lower":
        return (inp.realized <= inp.var_forecasts).astype(float)
    return (inp.realized >= inp.var_forecasts).astype(float)


def hit_series(inp: BacktestInput) -> np.ndarray:
    """Centered exceedance indicators I(event) - alpha_exc."""
    return exceedance_indicator(inp) - inp.alpha_exc


def kupiec_test(hits: np.ndarray, alpha_exc: float) -> Tuple[float, float]:
    """Unconditional-coverage likelihood ratio from a centered hit series.

    Returns (LR, p) where LR compares the binomial likelihood at alpha_exc
    against the observed frequency and p is the upper chi2(1) tail.  The
    x = 0 and x = n cases use the x*log(x/n) -> 0 limit.
    """
    hits = np.asarray(hits, dtype=float)
    if hits.size == 0:
        raise ParameterError("kupiec_test needs at least one observation")
    if not 0.0 < alpha_exc < 1.0:
        raise ParameterError("alpha_exc must lie in (0, 1)")
    n = hits.size
    x = int(np.count_nonzero(hits > 0.0))
    loglik_null = (n - x) * np.log1p(-alpha_exc) + x * np.log(alpha_exc)
    loglik_obs = 0.0
    if 0 < x:
        loglik_obs += x * np.log(x / n)
    if x < n:
        loglik_obs += (n - x) * np.log1p(-x / n)
    lr = max(-2.0 * (loglik_null - loglik_obs), 0.0) + 0.0
    p_value = float(stats.chi2.sf(lr, df=1))
    return float(lr), p_value


@dataclass(frozen=True)
class DqResult:
    statistic: float
    p_value: float
    dof: int
    pinv_used: bool = False


def _snap_power_of_two(value: float) -> float:
    # error-free scaling: normalizing by a power of two only shifts exponents,
    # so series scaled by 2^k produce bit-identical regressors
    if value <= 0.0 or not np.isfinite(value):
        return 1.0
    return float(2.0 ** np.round(np.log2(value)))


def dq_test(hits: np.ndarray, var_forecasts: np.ndarray,
            alpha_exc: float) -> DqResult:
    """Dynamic quantile regression test of the centered hit series.

    Regresses hits on an intercept, four lagged hits, and the contemporaneous
    VaR forecast (the forecast is known one step ahead, so it is a valid
    instrument).  The first four observations are dropped for lag alignment.
    The statistic is (X'h)'(X'X)^{-1}(X'h) / (alpha_exc (1 - alpha_exc)),
    asymptotically chi2 with one degree of freedom per regressor.

    The VaR column is normalized by a power-of-two snap of its largest
    magnitude, making the statistic bit-identical when data and forecasts
    are rescaled by a common power of two (and equal to rounding noise for
    any other positive factor).
    """
    hits = np.asarray(hits, dtype=float)
    var_f = np.asarray(var_forecasts, dtype=float)
    if hits.ndim != 1 or var_f.ndim != 1 or hits.size != var_f.size:
        raise ParameterError("hits and var_forecasts must be aligned vectors")
    if not 0.0 < alpha_exc < 1.0:
        raise ParameterError("alpha_exc must lie in (0, 1)")
    n = hits.size
    if n <= 20:
        raise InsufficientDataError("dq_test needs more than 20 observations")

    scale = _snap_power_of_two(float(np.max(np.abs(var_f))))
    var_norm = var_f / scale

    rows = n - DQ_HIT_LAGS
    dof = 2 + DQ_HIT_LAGS
    design = np.empty((rows, dof))
    design[:, 0] = 1.0
    for lag in range(1, DQ_HIT_LAGS + 1):
        design[:, lag] = hits[DQ_HIT_LAGS - lag:n - lag]
    design[:, DQ_HIT_LAGS + 1] = var_norm[DQ_HIT_LAGS:]
    response = hits[DQ_HIT_LAGS:]

    gram = design.T @ design
    moment = design.T @ response
    pinv_used = False
    cond = np.linalg.cond(gram)
    if np.isfinite(cond) and cond < COND_LIMIT:
        solved = np.linalg.solve(gram, moment)
    else:
        solved = np.linalg.pinv(gram) @ moment
        pinv_used = True
    statistic = max(float(moment @ solved) / (alpha_exc * (1.0 - alpha_exc)),
                    0.0)
    p_value = float(stats.chi2.sf(statistic, df=dof))
    return DqResult(statistic=statistic, p_value=p_value, dof=dof,
                    pinv_used=pinv_used)


@dataclass(frozen=True)
class EsBootstrapResult:
    """Bootstrap test that exceedance-date returns average to the ES forecast."""

    mean_excess: float
    p_value: float
    n_boot: int
    n_exceedances: int
    standardized: bool
    below_resolution: bool = False

    @property
    def p_display(self) -> str:
        if self.below_resolution:
            return f"< 1/{self.n_boot}"
        return f"{self.p_value:.6g}"


def es_bootstrap_test(inp: BacktestInput, n_boot: int = 5000,
                      seed: int = 0) -> EsBootstrapResult:
    """Two-sided bootstrap test of zero mean excess beyond the ES forecast.

    Excesses are (Y_j - ES_j) / sigma_j over exceedance dates (raw when no
    sigma series is supplied).  Resampling happens under the null: the
    observed excesses are centered, resampled ``n_boot`` times, and the
    p-value is the add-one-smoothed fraction of bootstrap means at least as
    large in magnitude as the observed mean.  A p-value smaller than the
    bootstrap resolution is flagged and displayed as "< 1/n_boot".
    """
    if n_boot < 1:
        raise ParameterError("n_boot must be positive")
    exceed = exceedance_indicator(inp) > 0.0
    n_exc = int(np.count_nonzero(exceed))
    if n_exc < 5:
        raise InsufficientDataError(
            f"es_bootstrap_test needs at least 5 exceedances, found {n_exc}")
    excess = inp.realized[exceed] - inp.es_forecasts[exceed]
    standardized = inp.sigma_forecasts is not None
    if standardized:
        excess = excess / inp.sigma_forecasts[exceed]

    observed = float(np.mean(excess))
    centered = excess - observed
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n_exc, size=(n_boot, n_exc))
    boot_means = centered[draws].mean(axis=1)
    hits_as_large = int(np.count_nonzero(np.abs(boot_means) >= abs(observed)))
    p_value = (1.0 + hits_as_large) / (n_boot + 1.0)
    return EsBootstrapResult(
        mean_excess=observed,
        p_value=float(p_value),
        n_boot=n_boot,
        n_exceedances=n_exc,
        standardized=standardized,
        below_resolution=hits_as_large == 0,
    )


@dataclass(frozen=True)
class BacktestReport:
    """Summary of the three forecast tests plus exceedance bookkeeping."""

    alpha_exc: float
    n_obs: int
    n_exceedances: int
    coverage_rate: float
    kupiec: Tuple[float, float]
    dq: Tuple[float, float, int]
    es_bootstrap: Tuple[float, float, int]
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        for label, p in (("kupiec", self.kupiec[1]), ("dq", self.dq[1]),
                         ("es_bootstrap", self.es_bootstrap[1])):
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{label} p-value outside [0, 1]")

    def to_json_dict(self) -> dict:
        out = {
            "alpha_exc": self.alpha_exc,
            "n_obs": self.n_obs,
            "n_exceedances": self.n_exceedances,
            "coverage_rate": self.coverage_rate,
            "kupiec": {
                "statistic": self.kupiec[0],
                "p_value": self.kupiec[1],
            },
            "dq": {
                "statistic": self.dq[0],
                "p_value": self.dq[1],
                "dof": self.dq[2],
            },
            "es_bootstrap": {
                "mean_excess": self.es_bootstrap[0],
                "p_value": self.es_bootstrap[1],
                "n_boot": self.es_bootstrap[2],
            },
            "flags": list(self.flags),
        }
        if "es_p_below_resolution" in self.flags:
            out["es_bootstrap"]["p_display"] = f"< 1/{self.es_bootstrap[2]}"
        return out


def run_backtest(inp: BacktestInput, n_boot: int = 5000,
                 seed: int = 0) -> BacktestReport:
    """Run all three tests on one forecast series and collect the results."""
    hits = hit_series(inp)
    alpha_exc = inp.alpha_exc
    n_exc = int(np.count_nonzero(hits > 0.0))
    coverage = n_exc / inp.n_obs

    kupiec = kupiec_test(hits, alpha_exc)
    dq = dq_test(hits, inp.var_forecasts, alpha_exc)
    es = es_bootstrap_test(inp, n_boot=n_boot, seed=seed)

    flags = []
    if dq.pinv_used:
        flags.append("dq_pinv")
    if not es.standardized:
        flags.append("es_raw_excess")
    if es.below_resolution:
        flags.append("es_p_below_resolution")

    return BacktestReport(
        alpha_exc=alpha_exc,
        n_obs=inp.n_obs,
        n_exceedances=n_exc,
        coverage_rate=coverage,
        kupiec=kupiec,
        dq=(dq.statistic, dq.p_value, dq.dof),
        es_bootstrap=(es.mean_excess, es.p_value, es.n_boot),
        flags=tuple(flags),
    )
