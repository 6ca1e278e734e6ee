"""Privacy loss distributions of the Gaussian and Poisson-subsampled Gaussian.

Both adjacency directions are materialized.  For the plain Gaussian the two
directions coincide; for the subsampled mechanism they differ and epsilon
queries take the worse of the two.

Remove direction: P = (1-q) N(0, s^2) + q N(1, s^2) against Q = N(0, s^2);
the loss g(x) = log(1 - q + q exp((2x-1)/(2 s^2))) is increasing in x and
bounded below by log(1-q).  Add direction swaps the pair, so the loss is
-g(x) under N(0, s^2), bounded above by -log(1-q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import AccountingError, ConfigError
from .pld import ADD, REMOVE, PrivacyLossDistribution

DEFAULT_GRID = 1e-4
DEFAULT_TAIL_MASS = 1e-15


@dataclass
class MechanismPld:
    """Pair of direction-tagged PLDs for one mechanism."""

    remove: PrivacyLossDistribution
    add: PrivacyLossDistribution

    def compose(self, other: "MechanismPld") -> "MechanismPld":
        return MechanismPld(remove=self.remove.compose(other.remove).truncated(), add=self.add.compose(other.add).truncated())

    def self_compose(self, repetitions: int) -> "MechanismPld":
        return MechanismPld(remove=self.remove.self_compose(repetitions), add=self.add.self_compose(repetitions))

    def epsilon_at(self, delta: float) -> float:
        """Worst-direction epsilon."""
        return max(self.remove.epsilon_at(delta), self.add.epsilon_at(delta))

    def delta_at(self, epsilon: float) -> float:
        return max(self.remove.delta_at(epsilon), self.add.delta_at(epsilon))


def _atoms_from_cdf(edge_cdf: np.ndarray, min_index: int, grid: float, direction: str, tail_mass: float) -> PrivacyLossDistribution:
    """Pessimistic bucketing: mass with loss in ((k-1)h, kh] becomes an atom at kh."""
    probs = np.diff(edge_cdf)
    probs = np.maximum(probs, 0.0)
    probs[0] += max(edge_cdf[0], 0.0)  # everything below the first edge rounds up
    infinity_mass = max(1.0 - edge_cdf[-1], 0.0)
    return PrivacyLossDistribution(
        grid_spacing=grid,
        min_index=min_index,
        probs=probs,
        infinity_mass=infinity_mass,
        direction=direction,
        tail_mass=tail_mass,
    )


def pld_gaussian(
    sigma: float,
    sensitivity: float = 1.0,
    grid_spacing: float = DEFAULT_GRID,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> MechanismPld:
    """PLD of the Gaussian mechanism with noise sigma and L2 sensitivity.

    The loss is N(mu, 2 mu) with mu = sensitivity^2 / (2 sigma^2); both
    adjacency directions are identical.
    """
    if sigma <= 0:
        raise ConfigError("sigma must be > 0")
    if sensitivity <= 0:
        raise ConfigError("sensitivity must be > 0")
    mu = sensitivity**2 / (2.0 * sigma**2)
    scale = math.sqrt(2.0 * mu)
    lo = stats.norm.ppf(tail_mass, loc=mu, scale=scale)
    hi = stats.norm.isf(tail_mass, loc=mu, scale=scale)
    k0 = int(np.floor(lo / grid_spacing))
    k1 = int(np.ceil(hi / grid_spacing)) + 1
    edges = np.arange(k0 - 1, k1) * grid_spacing
    cdf = stats.norm.cdf(edges, loc=mu, scale=scale)
    remove = _atoms_from_cdf(cdf, k0, grid_spacing, REMOVE, tail_mass)
    add = PrivacyLossDistribution(
        grid_spacing=grid_spacing,
        min_index=remove.min_index,
        probs=remove.probs,
        infinity_mass=remove.infinity_mass,
        direction=ADD,
        tail_mass=tail_mass,
    )
    return MechanismPld(remove=remove, add=add)


def pld_subsampled_gaussian(
    sigma: float,
    sampling_rate: float,
    grid_spacing: float = DEFAULT_GRID,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> MechanismPld:
    """PLD of the Poisson-subsampled Gaussian mechanism (sensitivity 1)."""
    if sigma <= 0:
        raise ConfigError("sigma must be > 0")
    if not 0 < sampling_rate <= 1:
        raise ConfigError(f"sampling rate must be in (0, 1], got {sampling_rate}")
    q = float(sampling_rate)
    s2 = sigma * sigma

    def g(x: np.ndarray) -> np.ndarray:
        # log(1 - q + q e^{(2x-1)/(2 s2)}), stable for q near 0 and 1
        return np.log1p(q * np.expm1((2.0 * x - 1.0) / (2.0 * s2)))

    def g_inv(y: np.ndarray) -> np.ndarray:
        # e^y - (1-q) = q e^{(2x-1)/(2 s2)}
        return s2 * (np.log(np.expm1(y) + q) - math.log(q)) + 0.5

    log1mq = math.log1p(-q) if q < 1 else -math.inf

    def cdf_mixture(x: np.ndarray) -> np.ndarray:
        return (1.0 - q) * stats.norm.cdf(x / sigma) + q * stats.norm.cdf((x - 1.0) / sigma)

    # remove: loss = g(X), X ~ mixture; support (log(1-q), inf)
    x_lo = sigma * stats.norm.ppf(tail_mass)
    x_hi = 1.0 + sigma * stats.norm.isf(tail_mass)
    l_lo, l_hi = g(np.array([x_lo, x_hi]))
    k0 = int(np.floor(l_lo / grid_spacing))
    k1 = int(np.ceil(l_hi / grid_spacing)) + 1
    edges_loss = np.arange(k0 - 1, k1) * grid_spacing
    edges_x = np.full_like(edges_loss, -np.inf)
    open_side = edges_loss > log1mq
    with np.errstate(divide="ignore"):
        edges_x[open_side] = g_inv(edges_loss[open_side])
    remove = _atoms_from_cdf(cdf_mixture(edges_x), k0, grid_spacing, REMOVE, tail_mass)

    # add: loss = -g(X), X ~ N(0, s2); support (-inf, -log(1-q))
    l_lo_add = -g(np.array([1.0 + sigma * stats.norm.isf(tail_mass)]))[0]
    l_hi_add = -log1mq if q < 1 else -g(np.array([sigma * stats.norm.ppf(tail_mass)]))[0]
    k0a = int(np.floor(l_lo_add / grid_spacing))
    k1a = int(np.ceil(l_hi_add / grid_spacing)) + 1
    edges_loss = np.arange(k0a - 1, k1a) * grid_spacing
    # P(loss <= y) = P(g(X) >= -y) = sf(g_inv(-y) / sigma); for y >= -log(1-q) it is 1
    cdf = np.ones_like(edges_loss)
    inside = -edges_loss > log1mq
    with np.errstate(divide="ignore"):
        cdf[inside] = stats.norm.sf(g_inv(-edges_loss[inside]) / sigma)
    add = _atoms_from_cdf(cdf, k0a, grid_spacing, ADD, tail_mass)
    return MechanismPld(remove=remove, add=add)


def analytic_gaussian_epsilon(sigma: float, sensitivity: float, delta: float) -> float:
    """Exact Gaussian-mechanism epsilon(delta) via the analytic hockey stick.

    delta(eps) = Phi(s/(2 sigma) - eps sigma/s) - e^eps Phi(-s/(2 sigma) - eps sigma/s).
    """
    if sigma <= 0 or sensitivity <= 0:
        raise ConfigError("sigma and sensitivity must be > 0")
    r = sensitivity / sigma

    def delta_of(eps: float) -> float:
        return float(stats.norm.cdf(r / 2 - eps / r) - math.exp(eps) * stats.norm.cdf(-r / 2 - eps / r))

    if delta_of(0.0) <= delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while delta_of(hi) > delta:
        hi *= 2
        if hi > 1e6:
            raise AccountingError("failed to bracket epsilon")
    for _ in range(200):
        mid = (lo + hi) / 2
        if delta_of(mid) > delta:
            lo = mid
        else:
            hi = mid
    return hi
