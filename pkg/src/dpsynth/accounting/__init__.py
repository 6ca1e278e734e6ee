from .budget import (
    GAUSSIAN,
    SUBSAMPLED_GAUSSIAN,
    BudgetReport,
    MechanismSpec,
    account,
    calibrate_sigma,
    compose,
    training_budget,
)
from .mechanisms import MechanismPld, analytic_gaussian_epsilon, pld_gaussian, pld_subsampled_gaussian
from .pld import ADD, REMOVE, PrivacyLossDistribution

__all__ = [
    "ADD",
    "GAUSSIAN",
    "REMOVE",
    "SUBSAMPLED_GAUSSIAN",
    "BudgetReport",
    "MechanismPld",
    "MechanismSpec",
    "PrivacyLossDistribution",
    "account",
    "analytic_gaussian_epsilon",
    "calibrate_sigma",
    "compose",
    "pld_gaussian",
    "pld_subsampled_gaussian",
    "training_budget",
]
