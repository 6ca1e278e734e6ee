"""Discretized privacy loss distributions and their composition.

A privacy loss distribution (PLD) is the distribution of log(dP/dQ) under P
for a mechanism's dominating pair (P, Q).  Atoms live on a uniform grid
``loss = index * grid_spacing``; mass between grid points is rounded toward
the larger loss (pessimistic), so every epsilon reported from these objects
upper-bounds the exact value.  Composition of independent mechanisms is
convolution of their PLDs; repeated self-composition uses exponentiation by
squaring with tail truncation, where truncated upper-tail mass moves to the
distinguishing event (again pessimistic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GridMismatchError, UnboundedEpsilonError

REMOVE = "remove"
ADD = "add"

_FFT_THRESHOLD = 4096


def _convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = len(a) + len(b) - 1
    if min(len(a), len(b)) <= 64 or n <= _FFT_THRESHOLD:
        out = np.convolve(a, b)
    else:
        nf = 1
        while nf < n:
            nf *= 2
        out = np.fft.irfft(np.fft.rfft(a, nf) * np.fft.rfft(b, nf), nf)[:n]
    return np.maximum(out, 0.0)


@dataclass
class PrivacyLossDistribution:
    grid_spacing: float
    min_index: int  # losses are (min_index + arange(len(probs))) * grid_spacing
    probs: np.ndarray
    infinity_mass: float
    direction: str = REMOVE
    tail_mass: float = 1e-15

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)

    @property
    def losses(self) -> np.ndarray:
        return (self.min_index + np.arange(len(self.probs))) * self.grid_spacing

    def total_mass(self) -> float:
        return float(self.probs.sum() + self.infinity_mass)

    def truncated(self, tail_mass: float | None = None) -> "PrivacyLossDistribution":
        """Drop negligible tails: lower tail collapses upward onto the first kept
        atom, upper tail joins the distinguishing mass.  Both moves are
        pessimistic."""
        tail = self.tail_mass if tail_mass is None else tail_mass
        c = np.cumsum(self.probs)
        total = c[-1]
        lo = int(np.searchsorted(c, tail))
        hi = int(np.searchsorted(c, total - tail))
        hi = min(hi, len(self.probs) - 1)
        lo = min(lo, hi)
        probs = self.probs[lo : hi + 1].copy()
        probs[0] += c[lo] - self.probs[lo]
        upper = total - c[hi]
        return PrivacyLossDistribution(
            grid_spacing=self.grid_spacing,
            min_index=self.min_index + lo,
            probs=probs,
            infinity_mass=self.infinity_mass + upper,
            direction=self.direction,
            tail_mass=tail,
        )

    def compose(self, other: "PrivacyLossDistribution") -> "PrivacyLossDistribution":
        """Distribution of the sum of independent losses."""
        if abs(self.grid_spacing - other.grid_spacing) > 1e-18:
            raise GridMismatchError(
                f"grid spacing mismatch: {self.grid_spacing} vs {other.grid_spacing}"
            )
        probs = _convolve(self.probs, other.probs)
        inf_mass = 1.0 - (1.0 - self.infinity_mass) * (1.0 - other.infinity_mass)
        return PrivacyLossDistribution(
            grid_spacing=self.grid_spacing,
            min_index=self.min_index + other.min_index,
            probs=probs,
            infinity_mass=inf_mass,
            direction=self.direction,
            tail_mass=max(self.tail_mass, other.tail_mass),
        )

    def self_compose(self, repetitions: int) -> "PrivacyLossDistribution":
        """repetitions-fold composition by exponentiation by squaring."""
        if repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        result: PrivacyLossDistribution | None = None
        base = self
        n = repetitions
        while n > 0:
            if n & 1:
                result = base if result is None else result.compose(base).truncated()
            n >>= 1
            if n > 0:
                base = base.compose(base).truncated()
        assert result is not None
        return result

    def delta_at(self, epsilon: float) -> float:
        """Hockey-stick divergence at epsilon under the discretized PLD."""
        losses = self.losses
        above = losses > epsilon
        if not above.any():
            return self.infinity_mass
        p = self.probs[above]
        # grouped exponent e^{eps - l} stays in (0, 1); no overflow for any support
        contrib = p * -np.expm1(epsilon - losses[above])
        return float(contrib.sum() + self.infinity_mass)

    def epsilon_at(self, delta: float) -> float:
        """Smallest epsilon >= 0 with hockey-stick divergence <= delta."""
        if not 0 < delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {delta}")
        if delta <= self.infinity_mass:
            raise UnboundedEpsilonError(
                f"delta={delta} is not achievable: distinguishing mass is {self.infinity_mass}"
            )
        if self.delta_at(0.0) <= delta:
            return 0.0
        losses = self.losses
        # atoms at or below zero never contribute for epsilon >= 0; atoms above
        # the cap are folded into the distinguishing mass (pessimistic, and off
        # by at most e^{eps - cap} relative on their contribution)
        cap = 500.0
        inf_mass = self.infinity_mass + float(self.probs[losses > cap].sum())
        if delta <= inf_mass:
            raise UnboundedEpsilonError(f"epsilon at delta={delta} exceeds the loss cap {cap}")
        keep = (losses > 0.0) & (losses <= cap)
        l = losses[keep]
        p = self.probs[keep]
        if len(l) == 0:
            return 0.0
        suffix_p = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
        pe = p * np.exp(-l)
        suffix_pe = np.concatenate([np.cumsum(pe[::-1])[::-1], [0.0]])
        # delta evaluated at each kept grid loss (atoms at the point excluded)
        deltas = suffix_p[1:] - np.exp(l) * suffix_pe[1:] + inf_mass
        idx = int(np.searchsorted(-deltas, -delta, side="left"))
        if idx >= len(l):
            return float(l[-1])
        # between grid points the active atom set {loss >= l[idx]} is fixed:
        # solve suffix_p[idx] + inf - e^eps * suffix_pe[idx] = delta
        a = suffix_p[idx] + inf_mass
        b = suffix_pe[idx]
        if b <= 0 or a - delta <= 0:
            return float(l[idx])
        eps = float(np.log((a - delta) / b))
        lo = l[idx - 1] if idx > 0 else 0.0
        return float(min(max(eps, lo, 0.0), l[idx]))
