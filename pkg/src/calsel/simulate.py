"""Linear GARCH path simulation with known ground-truth volatility and risks.

The generating model is Y_t = sigma_t * eps_t with

    sigma_t = beta0 + sum_i beta_i sigma_{t-i} + sum_j gamma_j |Y_{t-j}|,

driven by i.i.d. unit-variance innovations. Because the true sigma path is
kept, the conditional VaR/ES ground truth is available per date, which is what
the Monte Carlo tables are scored against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import (
    CapabilityError,
    InitializationError,
    ParameterError,
)
from .tails import DistSpec, normal_spec, student_t_spec

__all__ = [
    "GarchParams",
    "InnovationDist",
    "SimulatedPath",
    "CASE_PRESETS",
    "dist_from_name",
    "simulate_linear_garch",
    "true_conditional_risks",
]

GENERATOR_NAME = "numpy-pcg64"


@dataclass(frozen=True)
class GarchParams:
    """Coefficients (beta0, gamma_1..gamma_q, beta_1..beta_p) of the recursion."""

    beta0: float
    gammas: Tuple[float, ...]
    betas: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.beta0 > 0:
            raise ParameterError(f"beta0 must be > 0, got {self.beta0}")
        if any(g <= 0 for g in self.gammas):
            raise ParameterError("all gammas must be > 0")
        if sum(abs(b) for b in self.betas) >= 1.0:
            raise ParameterError("sum |beta_i| must be < 1 for an invertible recursion")

    @property
    def p(self) -> int:
        return len(self.betas)

    @property
    def q(self) -> int:
        return len(self.gammas)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.beta0], self.gammas, self.betas))


# The three coefficient sets used throughout the simulation studies.
CASE_PRESETS = {
    1: GarchParams(0.1, (0.3,), (0.5,)),
    2: GarchParams(0.1, (0.1,), (0.8,)),
    3: GarchParams(0.1, (0.05,), (0.9,)),
}


@dataclass(frozen=True)
class InnovationDist:
    """Innovation law: standard normal, variance-scaled Student t, or resample.

    kind "t" draws t(nu) scaled by sqrt((nu-2)/nu) so the variance is 1.
    kind "empirical" resamples (with replacement) from a supplied pool.
    """

    kind: str
    nu: Optional[float] = None
    pool: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("normal", "t", "empirical"):
            raise ParameterError(f"unknown innovation kind {self.kind!r}")
        if self.kind == "t":
            if self.nu is None or self.nu <= 2:
                raise ParameterError("t innovations need nu > 2")
        if self.kind == "empirical":
            if self.pool is None or len(self.pool) == 0:
                raise ParameterError("empirical innovations need a nonempty pool")

    @property
    def label(self) -> str:
        if self.kind == "t":
            return f"t{self.nu:g}"
        return self.kind

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.standard_normal(size)
        if self.kind == "t":
            s = math.sqrt((self.nu - 2.0) / self.nu)
            return s * rng.standard_t(self.nu, size)
        return rng.choice(np.asarray(self.pool, dtype=float), size=size, replace=True)

    def mean_abs(self) -> float:
        """E|eps|, exact for normal and t, empirical average for a pool."""
        if self.kind == "normal":
            return math.sqrt(2.0 / math.pi)
        if self.kind == "t":
            nu = self.nu
            raw = (
                2.0
                * math.sqrt(nu)
                * math.gamma((nu + 1.0) / 2.0)
                / (math.sqrt(math.pi) * (nu - 1.0) * math.gamma(nu / 2.0))
            )
            return math.sqrt((nu - 2.0) / nu) * raw
        return float(np.mean(np.abs(self.pool)))

    def to_dist_spec(self) -> DistSpec:
        if self.kind == "normal":
            return normal_spec()
        if self.kind == "t":
            return student_t_spec(self.nu, scaled=True)
        raise CapabilityError(
            "empirical innovation pools have no analytic quantile/partial moment"
        )


def dist_from_name(name: str) -> InnovationDist:
    """Parse a distribution label: "normal" or "t<nu>" (e.g. "t4", "t5")."""
    cleaned = name.strip().lower()
    if cleaned == "normal":
        return InnovationDist("normal")
    if cleaned.startswith("t") and len(cleaned) > 1:
        try:
            nu = float(cleaned[1:])
        except ValueError:
            raise ParameterError(f"unknown distribution name {name!r}")
        return InnovationDist("t", nu=nu)
    raise ParameterError(f"unknown distribution name {name!r}")


@dataclass(frozen=True)
class SimulatedPath:
    """A simulated series with its ground truth; Y_t = sigmas * innovations."""

    returns: np.ndarray
    sigmas: np.ndarray
    innovations: np.ndarray
    seed: int
    generator: str = GENERATOR_NAME

    def __len__(self) -> int:
        return len(self.returns)


def simulate_linear_garch(
    params: GarchParams,
    dist: InnovationDist,
    n: int,
    burn_in: int = 200,
    seed: int = 0,
    strict_init: bool = False,
) -> SimulatedPath:
    """Simulate n observations of the linear GARCH recursion after burn_in.

    The recursion starts at the unconditional level
    beta0 / (1 - sum betas - E|eps| sum gammas) when that denominator is
    positive; otherwise at beta0 (or InitializationError if strict_init).
    Identical (params, dist, n, burn_in, seed) reproduce the path bit-exactly.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    p, q = params.p, params.q
    if burn_in < max(p, q, 0):
        raise ParameterError(f"burn_in must be >= max(p, q) = {max(p, q)}")

    mean_abs = dist.mean_abs()
    denom = 1.0 - sum(params.betas) - mean_abs * sum(params.gammas)
    if denom > 0:
        sigma_init = params.beta0 / denom
    elif strict_init:
        raise InitializationError(
            "unconditional level undefined (denominator <= 0); cannot strict-init"
        )
    else:
        sigma_init = params.beta0

    rng = np.random.default_rng(seed)
    total = burn_in + n
    eps = dist.sample(rng, total)

    # Pre-sample history: sigma at its long-run level, |Y| at sigma * E|eps|.
    lag = max(p, q)
    sig = np.empty(total + lag)
    absy = np.empty(total + lag)
    sig[:lag] = sigma_init
    absy[:lag] = sigma_init * mean_abs
    y = np.empty(total)

    betas = params.betas
    gammas = params.gammas
    beta0 = params.beta0
    for t in range(total):
        i = t + lag
        s = beta0
        for j, b in enumerate(betas):
            s += b * sig[i - 1 - j]
        for j, g in enumerate(gammas):
            s += g * absy[i - 1 - j]
        if s <= 0:
            raise ParameterError(
                f"volatility recursion went non-positive at step {t} (sigma={s})"
            )
        sig[i] = s
        y[t] = s * eps[t]
        absy[i] = abs(y[t])

    return SimulatedPath(
        returns=y[burn_in:].copy(),
        sigmas=sig[lag + burn_in:].copy(),
        innovations=eps[burn_in:].copy(),
        seed=int(seed),
    )


def true_conditional_risks(
    path: SimulatedPath,
    dist: InnovationDist,
    alpha: float,
    tail: str = "lower",
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-date ground-truth (VaR_t, ES_t) = sigma_t * (Q_alpha, ES_alpha) of eps.

    tail "lower" uses ES = G(Q_alpha)/alpha (mass below the quantile); tail
    "upper" uses the mean above the quantile, -G(Q_alpha)/(1 - alpha) for a
    centered law. Raises CapabilityError when the innovation law has no
    analytic spec (empirical pools).
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must be in (0,1), got {alpha}")
    if tail not in ("lower", "upper"):
        raise ParameterError(f"tail must be 'lower' or 'upper', got {tail!r}")
    spec = dist.to_dist_spec()
    q = spec.quantile(alpha)
    g = spec.partial_moment(q)
    if tail == "lower":
        es = g / alpha
    else:
        es = (spec.mean - g) / (1.0 - alpha)
    return path.sigmas * q, path.sigmas * es
