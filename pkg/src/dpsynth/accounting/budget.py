"""End-to-end budget accounting and noise calibration.

A training run of the DP optimizer contributes a subsampled Gaussian PLD
raised to the step count; the one-shot histogram release contributes a plain
Gaussian PLD.  The composed epsilon is reported for the worse adjacency
direction, together with the discretization error bound (the pessimistic grid
rounds each of the n composed losses up by at most the grid spacing, so the
reported epsilon exceeds the exact value by at most n * grid_spacing).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import CalibrationError, ConfigError
from .mechanisms import DEFAULT_GRID, DEFAULT_TAIL_MASS, MechanismPld, pld_gaussian, pld_subsampled_gaussian

GAUSSIAN = "gaussian"
SUBSAMPLED_GAUSSIAN = "subsampled_gaussian"


@dataclass
class MechanismSpec:
    kind: str
    sigma: float
    sensitivity: float = 1.0  # gaussian only
    sampling_rate: float = 0.0  # subsampled_gaussian only
    repetitions: int = 1

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, SUBSAMPLED_GAUSSIAN):
            raise ConfigError(f"unknown mechanism kind {self.kind!r}")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.kind == SUBSAMPLED_GAUSSIAN and not 0 <= self.sampling_rate <= 1:
            raise ConfigError("sampling rate must be in [0, 1]")

    def build(self, grid_spacing: float = DEFAULT_GRID, tail_mass: float = DEFAULT_TAIL_MASS) -> MechanismPld:
        if self.kind == GAUSSIAN:
            return pld_gaussian(self.sigma, self.sensitivity, grid_spacing, tail_mass)
        return pld_subsampled_gaussian(self.sigma, self.sampling_rate, grid_spacing, tail_mass)


@dataclass
class BudgetReport:
    epsilon: float
    delta: float
    grid_spacing: float
    error_bound: float  # upper bound on the pessimistic discretization excess
    direction_epsilons: dict = field(default_factory=dict)
    per_mechanism: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "grid_spacing": self.grid_spacing,
            "error_bound": self.error_bound,
            "direction_epsilons": dict(self.direction_epsilons),
            "per_mechanism": list(self.per_mechanism),
        }


def compose(parts: list[tuple[MechanismPld, int]]) -> MechanismPld:
    """Composed PLD pair for a list of (mechanism PLD, repetitions)."""
    if not parts:
        raise ConfigError("nothing to compose")
    composed: MechanismPld | None = None
    for pld, reps in parts:
        if reps < 1:
            raise ConfigError("repetitions must be >= 1")
        piece = pld.self_compose(reps) if reps > 1 else pld
        composed = piece if composed is None else composed.compose(piece)
    assert composed is not None
    return composed


def account(
    specs: list[MechanismSpec],
    delta: float,
    grid_spacing: float = DEFAULT_GRID,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> BudgetReport:
    """Compose all mechanisms and query epsilon at delta."""
    if not 0 < delta < 1:
        raise ConfigError(f"delta must be in (0, 1), got {delta}")
    if not specs:
        raise ConfigError("at least one mechanism is required")
    plds = [(spec.build(grid_spacing, tail_mass), spec.repetitions) for spec in specs]
    composed = compose(plds)
    per_mechanism = []
    for spec, (pld, reps) in zip(specs, plds):
        standalone = pld.self_compose(reps).epsilon_at(delta) if reps > 1 else pld.epsilon_at(delta)
        entry = {
            "kind": spec.kind,
            "sigma": spec.sigma,
            "repetitions": spec.repetitions,
            "standalone_epsilon": standalone,
        }
        if spec.kind == GAUSSIAN:
            entry["sensitivity"] = spec.sensitivity
        else:
            entry["sampling_rate"] = spec.sampling_rate
        per_mechanism.append(entry)
    total_reps = sum(spec.repetitions for spec in specs)
    return BudgetReport(
        epsilon=composed.epsilon_at(delta),
        delta=delta,
        grid_spacing=grid_spacing,
        error_bound=total_reps * grid_spacing,
        direction_epsilons={
            "remove": composed.remove.epsilon_at(delta),
            "add": composed.add.epsilon_at(delta),
        },
        per_mechanism=per_mechanism,
    )


def training_budget(
    sigma: float,
    sampling_rate: float,
    steps: int,
    delta: float,
    histogram_sigma: float | None = None,
    grid_spacing: float = DEFAULT_GRID,
) -> BudgetReport:
    """Budget of DP optimizer steps optionally composed with one histogram release."""
    specs = [MechanismSpec(kind=SUBSAMPLED_GAUSSIAN, sigma=sigma, sampling_rate=sampling_rate, repetitions=steps)]
    if histogram_sigma is not None:
        specs.append(MechanismSpec(kind=GAUSSIAN, sigma=histogram_sigma, sensitivity=1.0))
    return account(specs, delta, grid_spacing)


def calibrate_sigma(
    target_epsilon: float,
    delta: float,
    sampling_rate: float,
    steps: int,
    grid_spacing: float = DEFAULT_GRID,
    rel_tol: float = 1e-3,
    max_iters: int = 60,
) -> float:
    """Bisection on the noise multiplier until epsilon(sigma) hits the target.

    epsilon is strictly decreasing in sigma; the bracket is grown outward
    before bisecting.
    """
    if target_epsilon <= 0 or not 0 < delta < 1:
        raise ConfigError("targets must be positive and delta in (0, 1)")

    def eps_of(sig: float) -> float:
        pld = pld_subsampled_gaussian(sig, sampling_rate, grid_spacing)
        return pld.self_compose(steps).epsilon_at(delta)

    lo, hi = 0.3, 2.0
    tries = 0
    while eps_of(lo) < target_epsilon:
        lo /= 2
        tries += 1
        if tries > 20 or lo < 1e-4:
            raise CalibrationError(f"cannot bracket target epsilon {target_epsilon} from below")
    tries = 0
    while eps_of(hi) > target_epsilon:
        hi *= 2
        tries += 1
        if tries > 20:
            raise CalibrationError(f"cannot bracket target epsilon {target_epsilon} from above")
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        eps = eps_of(mid)
        if abs(eps - target_epsilon) <= rel_tol * target_epsilon:
            return mid
        if eps > target_epsilon:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"calibration did not converge to epsilon {target_epsilon} within {max_iters} iterations"
    )
