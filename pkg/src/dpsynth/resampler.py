"""Per-cluster quota selection matching a private histogram, plus pool sizing.

The per-cluster target is max(ceil(T * p_i), 0).  Ceiling overshoot is never
trimmed, so the selected size is the sum of targets rather than exactly T.
Each cluster samples from its own derived random stream, making parallel and
serial selection identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, group_sizes
from .errors import ConfigError, InfeasiblePlanError
from .rng import SplitMix64, derive_seed

# Slop subtracted before the ceiling so a float product that lands within
# rounding error above an integer does not get bumped to the next quota.
_CEIL_SLOP = 1e-9


def _ceil_tolerant(values: np.ndarray) -> np.ndarray:
    return np.ceil(np.asarray(values, dtype=np.float64) - _CEIL_SLOP).astype(np.int64)


@dataclass
class SelectionPlan:
    targets: np.ndarray  # (k,) int64, max(ceil(T*p_i), 0)
    group_sizes: np.ndarray  # (k,) int64 available pool per cluster
    t: int
    deficits: np.ndarray = field(init=False)  # (k,) int64, max(target - size, 0)

    def __post_init__(self):
        self.targets = np.ascontiguousarray(self.targets, dtype=np.int64)
        self.group_sizes = np.ascontiguousarray(self.group_sizes, dtype=np.int64)
        if self.targets.shape != self.group_sizes.shape:
            raise ConfigError("targets and group sizes differ in length")
        self.deficits = np.maximum(self.targets - self.group_sizes, 0)

    @property
    def feasible(self) -> bool:
        return bool((self.deficits == 0).all())

    @property
    def total_selected(self) -> int:
        return int(self.targets.sum())


@dataclass
class SelectionResult:
    selected_by_cluster: list[np.ndarray]  # synthetic indices per cluster
    replacement_used: bool

    @property
    def actual_size(self) -> int:
        return sum(len(s) for s in self.selected_by_cluster)

    def indices(self) -> np.ndarray:
        if not self.selected_by_cluster:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.sort(s) for s in self.selected_by_cluster])

    def selected_counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.selected_by_cluster], dtype=np.int64)


def plan(densities: np.ndarray, sizes: np.ndarray, t: int) -> SelectionPlan:
    """Quota plan: n_i = max(ceil(t * p_i), 0) against available group sizes.

    Negative densities (noise-driven) clamp to a zero quota and can never
    make the plan infeasible.
    """
    if t < 0:
        raise ConfigError(f"target count must be >= 0, got {t}")
    p = np.asarray(densities, dtype=np.float64)
    targets = np.maximum(_ceil_tolerant(t * p), 0)
    return SelectionPlan(targets=targets, group_sizes=np.asarray(sizes, dtype=np.int64), t=t)


def resample(
    selection: SelectionPlan,
    model: ClusterModel,
    seed: int,
    with_replacement: bool = False,
) -> SelectionResult:
    """Uniformly sample each cluster's quota from its synthetic pool.

    Without replacement an infeasible plan raises InfeasiblePlanError carrying
    the per-cluster deficits.
    """
    sizes = group_sizes(model)
    if len(sizes) != len(selection.targets):
        raise ConfigError("plan and model disagree on cluster count")
    if not with_replacement and not selection.feasible:
        raise InfeasiblePlanError(selection.deficits.copy())

    order = np.argsort(model.assignments, kind="stable")
    boundaries = np.searchsorted(model.assignments[order], np.arange(len(sizes) + 1))
    picked: list[np.ndarray] = []
    for i, target in enumerate(selection.targets):
        members = order[boundaries[i] : boundaries[i + 1]]
        target = int(target)
        rng = SplitMix64(derive_seed(seed, "resample", i))
        if target == 0:
            picked.append(members[:0].copy())
        elif with_replacement:
            if len(members) == 0:
                raise InfeasiblePlanError(selection.deficits.copy())
            picked.append(members[rng.integers(target, len(members))])
        else:
            picked.append(rng.sample_without_replacement(members, target))
    return SelectionResult(selected_by_cluster=picked, replacement_used=with_replacement)


@dataclass
class InitialPoolEstimate:
    required_pool_size: float  # pool size at which expected availability meets demand
    unsatisfiable: list[int]  # clusters with demand but zero synthetic mass
    plan: SelectionPlan | None  # exact feasibility against given group sizes, if provided


def required_initial_multiplier(
    densities: np.ndarray,
    synthetic_fractions: np.ndarray,
    t: int,
    sizes: np.ndarray | None = None,
) -> InitialPoolEstimate:
    """Minimal initial pool size estimate: max over demanded clusters of n_i / q_i.

    q_i are the empirical synthetic cluster fractions.  A cluster with a
    positive quota but q_i = 0 can never be satisfied in expectation and is
    reported instead of folded into the maximum.
    """
    q = np.asarray(synthetic_fractions, dtype=np.float64)
    if (q < 0).any():
        raise ConfigError("synthetic fractions must be >= 0")
    total = q.sum()
    if len(q) and abs(total - 1.0) > 1e-9:
        raise ConfigError(f"synthetic fractions must sum to 1, got {total}")
    p = np.asarray(densities, dtype=np.float64)
    targets = np.maximum(_ceil_tolerant(t * p), 0)
    demanded = targets > 0
    unsatisfiable = [int(i) for i in np.flatnonzero(demanded & (q == 0))]
    usable = demanded & (q > 0)
    if unsatisfiable:
        required = float("inf")
    elif not usable.any():
        required = 0.0
    else:
        required = float((targets[usable] / q[usable]).max())
    exact = None
    if sizes is not None:
        exact = SelectionPlan(targets=targets, group_sizes=np.asarray(sizes, dtype=np.int64), t=t)
    return InitialPoolEstimate(required_pool_size=required, unsatisfiable=unsatisfiable, plan=exact)


def save_selection_report(selection: SelectionPlan, result: SelectionResult | None, path: str | Path) -> None:
    obj = {
        "t": selection.t,
        "targets": [int(v) for v in selection.targets],
        "group_sizes": [int(v) for v in selection.group_sizes],
        "deficits": [int(v) for v in selection.deficits],
        "feasible": selection.feasible,
        "total_selected": selection.total_selected,
    }
    if result is not None:
        obj["actual_size"] = result.actual_size
        obj["replacement_used"] = result.replacement_used
        obj["selected_counts"] = [int(v) for v in result.selected_counts()]
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
