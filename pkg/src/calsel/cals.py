"""Composite asymmetric least squares on a truncated ARCH sieve.

Volatility is approximated by sigma_t ~ a0 + sum_i a_i |Y_{t-i}| with a0 = 1
for identification, and the coefficients are fit jointly with K innovation
expectiles u_1..u_K by minimizing

    sum_t sum_k rho_{tau_k}(Y_t - u_k * eta' x_t),    rho_tau(r) = |tau - 1(r<0)| r^2,

over theta = (u_1..u_K, a_1..a_m). A least-squares GARCH refit of the sieve
path then produces the refined volatility used for residual extraction.

The optimizer alternates exact weighted least-squares block updates (the
standard expectile IRLS) with damped Newton polishing on the piecewise
quadratic objective; every accepted step is forced non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .el import sample_expectile
from .errors import InsufficientDataError, ParameterError, RankDeficiencyError

__all__ = [
    "SieveConfig",
    "SieveFit",
    "VolatilityPath",
    "RefitCoeffs",
    "build_design",
    "asymmetric_square_loss",
    "composite_loss",
    "fit_cals",
    "cals_gradient",
    "preliminary_volatility",
    "preliminary_forecast",
    "refit_garch",
    "refined_forecast",
]

MAX_OUTER_ITER = 500
PARAM_TOL = 1e-8
GRAD_TOL = 1e-6
VOL_FLOOR_FACTOR = 1e-8


def default_tau_grid(k: int = 19) -> np.ndarray:
    """Uniform expectile levels j/(K+1), j = 1..K."""
    return np.arange(1, k + 1, dtype=float) / (k + 1)


@dataclass(frozen=True)
class SieveConfig:
    """Truncation lag m and the expectile level grid."""

    m: int = 13
    tau_grid: np.ndarray = field(default_factory=default_tau_grid)

    def __post_init__(self):
        object.__setattr__(self, "tau_grid", np.asarray(self.tau_grid, dtype=float))
        if self.m < 0:
            raise ParameterError(f"m must be >= 0, got {self.m}")
        tg = self.tau_grid
        if tg.ndim != 1 or len(tg) == 0:
            raise ParameterError("tau_grid must be a nonempty 1-d array")
        if np.any(tg <= 0) or np.any(tg >= 1):
            raise ParameterError("tau_grid values must lie in (0,1)")
        if len(np.unique(tg)) != len(tg) or np.any(np.diff(tg) <= 0):
            raise ParameterError("tau_grid must be strictly increasing and distinct")

    @property
    def k(self) -> int:
        return len(self.tau_grid)


@dataclass(frozen=True)
class SieveFit:
    """Fitted parameters: theta = (u_1..u_K, a_0..a_m) with a_0 = 1."""

    tau_grid: np.ndarray
    theta: np.ndarray
    objective: float
    converged: bool
    iterations: int
    grad_norm: float

    @property
    def k(self) -> int:
        return len(self.tau_grid)

    @property
    def vartheta(self) -> np.ndarray:
        """Innovation expectiles u_1..u_K."""
        return self.theta[: self.k]

    @property
    def eta(self) -> np.ndarray:
        """Sieve coefficients (a_0, a_1..a_m), a_0 = 1."""
        return self.theta[self.k:]

    @property
    def m(self) -> int:
        return len(self.eta) - 1

    def to_json_dict(self) -> dict:
        return {
            "tau_grid": self.tau_grid.tolist(),
            "eta": self.eta.tolist(),
            "theta": self.theta.tolist(),
            "objective": self.objective,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class VolatilityPath:
    """sigma estimates for dates start..start+len-1 (0-based into the returns)."""

    values: np.ndarray
    kind: str
    start: int
    floor: float

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class RefitCoeffs:
    """Least-squares GARCH coefficients (beta0, gammas, betas).

    Unconstrained estimates: on noisy windows individual coefficients can
    leave the positive region, so no positivity validation is applied here;
    downstream volatility paths are floor-clamped instead.
    """

    beta0: float
    gammas: Tuple[float, ...]
    betas: Tuple[float, ...]

    @property
    def p(self) -> int:
        return len(self.betas)

    @property
    def q(self) -> int:
        return len(self.gammas)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.beta0], self.gammas, self.betas))


def build_design(returns: np.ndarray, m: int) -> np.ndarray:
    """Rows (1, |Y_{t-1}|, ..., |Y_{t-m}|) for t = m..n-1 (0-based)."""
    y = np.asarray(returns, dtype=float)
    n = len(y)
    if n <= m:
        raise InsufficientDataError(f"need more than m={m} observations, got {n}")
    x = np.empty((n - m, m + 1))
    x[:, 0] = 1.0
    a = np.abs(y)
    for i in range(1, m + 1):
        x[:, i] = a[m - i: n - i]
    return x


def asymmetric_square_loss(r, tau):
    """rho_tau(r): tau r^2 on r >= 0, (1-tau) r^2 on r < 0. Vectorized."""
    r = np.asarray(r, dtype=float)
    w = np.where(r < 0, 1.0 - tau, tau)
    return w * r * r


def _weights(v: np.ndarray, taus: np.ndarray) -> np.ndarray:
    # Kink tie-break: v = 0 takes the (1 - tau) side.
    return np.where(v <= 0, 1.0 - taus, taus)


def _sigma_path(x_lags, a, n):
    # intercept-only sieves (m = 0) still need a vector path
    if a.size:
        return 1.0 + x_lags @ a
    return np.ones(n)


def _objective(yt, x_lags, u, a, taus):
    s = _sigma_path(x_lags, a, len(yt))
    v = yt[:, None] - s[:, None] * u[None, :]
    w = _weights(v, taus)
    return float(np.sum(w * v * v)), s, v, w


def _gradient(yt, x_lags, u, a, taus):
    """Free-parameter gradient (d/du_1..K, d/da_1..m) of the composite loss."""
    s = _sigma_path(x_lags, a, len(yt))
    v = yt[:, None] - s[:, None] * u[None, :]
    w = _weights(v, taus)
    wv = w * v
    g_u = -2.0 * (wv * s[:, None]).sum(axis=0)
    if a.size:
        g_a = -2.0 * (x_lags.T @ (wv @ u))
    else:
        g_a = np.zeros(0)
    return np.concatenate([g_u, g_a])


def composite_loss(theta: np.ndarray, returns: np.ndarray, config: SieveConfig) -> float:
    """Composite asymmetric-squares objective at a full theta = (u, a0..am)."""
    theta = np.asarray(theta, dtype=float)
    k = config.k
    u = theta[:k]
    eta = theta[k:]
    y = np.asarray(returns, dtype=float)
    x = build_design(y, config.m)
    yt = y[config.m:]
    s = x @ eta
    v = yt[:, None] - s[:, None] * u[None, :]
    w = _weights(v, config.tau_grid)
    return float(np.sum(w * v * v))


def cals_gradient(theta: np.ndarray, returns: np.ndarray, config: SieveConfig) -> np.ndarray:
    """Gradient of the composite loss over the free parameters (u, a_1..a_m).

    The a_0 component is excluded (fixed at 1). Defined piecewise; at residual
    kinks the v <= 0 side is used, consistent with the loss weights.
    """
    theta = np.asarray(theta, dtype=float)
    k = config.k
    y = np.asarray(returns, dtype=float)
    x = build_design(y, config.m)
    return _gradient(y[config.m:], x[:, 1:], theta[:k], theta[k + 1:], config.tau_grid)


def _initial_params(yt, x_lags, taus, m):
    """Start values: rescaled least squares of |Y_t| on the design, then
    sample expectiles of volatility-standardized data."""
    if m > 0:
        design = np.column_stack([np.ones(len(yt)), x_lags])
        coef, _, _, _ = np.linalg.lstsq(design, np.abs(yt), rcond=None)
        a = np.zeros(m)
        if coef[0] > 0:
            cand = coef[1:] / coef[0]
            if np.all(1.0 + x_lags @ cand > 0):
                a = cand
    else:
        a = np.zeros(0)
    s = _sigma_path(x_lags, a, len(yt))
    z = yt / s
    u = np.array([sample_expectile(z, t) for t in taus])
    return u, a


def _solve_u_block(yt, x_lags, u, a, taus, max_inner=8):
    s = _sigma_path(x_lags, a, len(yt))
    sy = s * yt
    ss = s * s
    u = u.copy()
    for _ in range(max_inner):
        v = yt[:, None] - s[:, None] * u[None, :]
        w = _weights(v, taus)
        den = w.T @ ss
        if np.any(den <= 0):
            raise RankDeficiencyError("degenerate volatility path in expectile update")
        u_new = (w.T @ sy) / den
        if np.max(np.abs(u_new - u)) <= 1e-14 * (1.0 + np.max(np.abs(u_new))):
            return u_new
        u = u_new
    return u


def _solve_a_block(yt, x_lags, u, a, taus, max_inner=8):
    uu = u * u
    a = a.copy()
    for _ in range(max_inner):
        s = 1.0 + x_lags @ a
        v = yt[:, None] - s[:, None] * u[None, :]
        w = _weights(v, taus)
        d = w @ uu
        c = yt * (w @ u) - (w @ uu)
        mat = x_lags.T @ (d[:, None] * x_lags)
        rhs = x_lags.T @ c
        try:
            a_new = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(f"singular sieve normal equations: {exc}") from exc
        if np.max(np.abs(a_new - a)) <= 1e-14 * (1.0 + np.max(np.abs(a_new))):
            return a_new
        a = a_new
    return a


def _accept_monotone(yt, x_lags, taus, u_old, a_old, obj_old, u_new, a_new):
    """Backtrack halving toward the old point until the loss does not increase."""
    u_c, a_c = u_new, a_new
    for _ in range(40):
        obj_c = _objective(yt, x_lags, u_c, a_c, taus)[0]
        if obj_c <= obj_old * (1.0 + 1e-15) + 1e-300:
            return u_c, a_c, obj_c
        u_c = 0.5 * (u_c + u_old)
        a_c = 0.5 * (a_c + a_old)
    return u_old, a_old, obj_old


def _hessian(yt, x_lags, u, a, taus):
    k = len(u)
    m = a.size
    s = _sigma_path(x_lags, a, len(yt))
    v = yt[:, None] - s[:, None] * u[None, :]
    w = _weights(v, taus)
    h = np.zeros((k + m, k + m))
    ss = s * s
    h[np.arange(k), np.arange(k)] = 2.0 * (w.T @ ss)
    if m:
        # cross block: sum_t -2 w (y - 2 u_k s) x_t
        coef = -2.0 * w * (yt[:, None] - 2.0 * s[:, None] * u[None, :])
        h[:k, k:] = coef.T @ x_lags
        h[k:, :k] = h[:k, k:].T
        d = w @ (u * u)
        h[k:, k:] = 2.0 * (x_lags.T @ (d[:, None] * x_lags))
    return h


def fit_cals(
    returns: np.ndarray,
    config: Optional[SieveConfig] = None,
    init: Optional[np.ndarray] = None,
) -> SieveFit:
    """Fit the composite expectile / sieve model.

    Internally the data are standardized by their sample std (the problem is
    exactly scale-equivariant: u scales with the data, a_i against it), which
    keeps stopping rules and the fit itself scale-consistent; results are
    mapped back to the original scale. Non-convergence within the iteration
    budget returns converged=False rather than raising.
    """
    if config is None:
        config = SieveConfig()
    y = np.asarray(returns, dtype=float)
    n = len(y)
    m = config.m
    if n <= m + 20:
        raise InsufficientDataError(f"need n > m + 20 = {m + 20}, got {n}")
    taus = config.tau_grid
    k = config.k

    scale = float(np.std(y))
    if scale <= 0:
        raise RankDeficiencyError("constant returns give a degenerate design")
    ys = y / scale
    x = build_design(ys, m)
    x_lags = x[:, 1:]
    yt = ys[m:]
    if m > 0:
        col_span = x_lags.max(axis=0) - x_lags.min(axis=0)
        if np.any(col_span <= 0):
            raise RankDeficiencyError("constant |Y| lag column; sieve not identified")

    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (k + m + 1,):
            raise ParameterError(f"init must have length K+m+1 = {k + m + 1}")
        u = init[:k] / scale
        a = init[k + 1:] * scale
    else:
        u, a = _initial_params(yt, x_lags, taus, m)

    obj = _objective(yt, x_lags, u, a, taus)[0]
    iterations = 0
    newton_from = 12
    grad_norm = np.inf
    for it in range(MAX_OUTER_ITER):
        iterations = it + 1
        u_prev, a_prev, obj_prev = u, a, obj

        stepped = False
        if it >= newton_from:
            g = _gradient(yt, x_lags, u, a, taus)
            grad_norm = float(np.max(np.abs(g)))
            if grad_norm < GRAD_TOL:
                break
            h = _hessian(yt, x_lags, u, a, taus)
            try:
                step = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.dot(step, g) < 0:
                t = 1.0
                for _ in range(30):
                    u_c = u + t * step[:k]
                    a_c = a + t * step[k:]
                    obj_c = _objective(yt, x_lags, u_c, a_c, taus)[0]
                    if obj_c <= obj * (1.0 + 1e-15):
                        u, a, obj = u_c, a_c, obj_c
                        stepped = True
                        break
                    t *= 0.5

        if not stepped:
            u_cand = _solve_u_block(yt, x_lags, u, a, taus)
            u, a, obj = _accept_monotone(yt, x_lags, taus, u, a, obj, u_cand, a)
            if m > 0:
                a_cand = _solve_a_block(yt, x_lags, u, a, taus)
                u, a, obj = _accept_monotone(yt, x_lags, taus, u, a, obj, u, a_cand)

        change = max(
            np.max(np.abs(u - u_prev)) if k else 0.0,
            np.max(np.abs(a - a_prev)) if m else 0.0,
        )
        # Gradient checks are deferred until the parameters stop moving; the
        # stopping rule needs both a tiny step and a near-zero gradient.
        if change < 1e-6:
            grad_norm = float(np.max(np.abs(_gradient(yt, x_lags, u, a, taus))))
            if change < PARAM_TOL and grad_norm < GRAD_TOL:
                break
            if obj_prev - obj <= 1e-15 * (1.0 + abs(obj)) and change < PARAM_TOL:
                break
        # Switch to Newton polishing early once block steps stop moving much.
        if change < 1e-3 and it + 1 < newton_from:
            newton_from = it + 1

    if not np.isfinite(grad_norm):
        grad_norm = float(np.max(np.abs(_gradient(yt, x_lags, u, a, taus))))
    converged = bool(grad_norm < GRAD_TOL)
    theta = np.concatenate([u * scale, [1.0], a / scale])
    obj_orig = obj * scale * scale
    return SieveFit(
        tau_grid=taus.copy(),
        theta=theta,
        objective=obj_orig,
        converged=converged,
        iterations=iterations,
        grad_norm=grad_norm,
    )


def _vol_floor(returns: np.ndarray) -> float:
    return VOL_FLOOR_FACTOR * float(np.std(np.asarray(returns, dtype=float)))


def preliminary_volatility(fit: SieveFit, returns: np.ndarray) -> VolatilityPath:
    """Sieve path sigma~_t = eta' x_t for t = m..n-1, clamped at the floor."""
    y = np.asarray(returns, dtype=float)
    x = build_design(y, fit.m)
    floor = _vol_floor(y)
    values = np.maximum(x @ fit.eta, floor)
    return VolatilityPath(values=values, kind="preliminary", start=fit.m, floor=floor)


def preliminary_forecast(fit: SieveFit, returns: np.ndarray) -> float:
    """One-step-ahead sieve volatility from the last m observations."""
    y = np.asarray(returns, dtype=float)
    m = fit.m
    if len(y) < m:
        raise InsufficientDataError(f"need at least m={m} trailing observations")
    eta = fit.eta
    s = eta[0]
    if m:
        s += float(eta[1:] @ np.abs(y[-1: -m - 1: -1]))
    return max(s, _vol_floor(y))


def refit_garch(
    prelim: VolatilityPath,
    returns: np.ndarray,
    p: int = 1,
    q: int = 1,
) -> Tuple[RefitCoeffs, VolatilityPath]:
    """Least-squares GARCH(p,q) refit of the sieve path, single pass.

    Regresses sigma~_t on (1, |Y_{t-1}|..|Y_{t-q}|, sigma~_{t-1}..sigma~_{t-p})
    over the dates where all lags exist, then emits the fitted (clamped)
    refined path.
    """
    if p < 1 or q < 1:
        raise ParameterError("refit needs p >= 1 and q >= 1")
    y = np.asarray(returns, dtype=float)
    n = len(y)
    sig = prelim.values
    start = prelim.start
    t0 = max(start + p, q)
    rows = n - t0
    if rows <= p + q + 20:
        raise InsufficientDataError(
            f"need more than p + q + 20 = {p + q + 20} usable rows, got {rows}"
        )
    z = np.empty((rows, 1 + q + p))
    z[:, 0] = 1.0
    a = np.abs(y)
    for j in range(1, q + 1):
        z[:, j] = a[t0 - j: n - j]
    for i in range(1, p + 1):
        z[:, q + i] = sig[t0 - i - start: n - i - start]
    target = sig[t0 - start:]
    coef, _, rank, _ = np.linalg.lstsq(z, target, rcond=None)
    if rank < 1 + p + q:
        raise RankDeficiencyError("singular refit normal equations")
    phi = RefitCoeffs(
        beta0=float(coef[0]),
        gammas=tuple(float(c) for c in coef[1: 1 + q]),
        betas=tuple(float(c) for c in coef[1 + q:]),
    )
    values = np.maximum(z @ coef, prelim.floor)
    refined = VolatilityPath(values=values, kind="refined", start=t0, floor=prelim.floor)
    return phi, refined


def refined_forecast(
    phi: RefitCoeffs, prelim: VolatilityPath, returns: np.ndarray
) -> float:
    """One-step-ahead refined volatility from trailing sieve values and |Y|."""
    y = np.asarray(returns, dtype=float)
    n = len(y)
    s = phi.beta0
    for j, g in enumerate(phi.gammas, start=1):
        s += g * abs(y[n - j])
    for i, b in enumerate(phi.betas, start=1):
        idx = n - i - prelim.start
        if idx < 0:
            raise InsufficientDataError("sieve path too short for the refit order")
        s += b * prelim.values[idx]
    return max(float(s), prelim.floor)
