"""Weighted entropy: evaluators, inequality checkers and entropy rates."""

__version__ = "0.1.0"

from .numerics import (  # noqa: E402
    DomainError,
    Estimate,
    NonConvergence,
    NumericConfig,
    StructureError,
    ValidationError,
    WeightedEntropyError,
)
from .model import (  # noqa: E402
    CustomDensity,
    DiscretePMF,
    Distribution,
    ExponentialFamilySpec,
    Gaussian,
    MarkovChainSpec,
    Uniform,
    WeightFunction,
    convolve,
    distribution_from_dict,
    laplace,
    mixture,
    simulate_path,
    stationary_distribution,
)
from .entropy import expect_phi, gaussian_wde_closed, wde, we_discrete, weighted_kl  # noqa: E402
from .inequalities import (  # noqa: E402
    CheckReport,
    gaussian_max_check,
    gibbs_check,
    hadamard_weighted_check,
    kyfan_gap,
    rwe_convexity_gap,
    we_concavity_gap,
)

__all__ = [
    "__version__",
    "DomainError",
    "Estimate",
    "NonConvergence",
    "NumericConfig",
    "StructureError",
    "ValidationError",
    "WeightedEntropyError",
    "CustomDensity",
    "DiscretePMF",
    "Distribution",
    "ExponentialFamilySpec",
    "Gaussian",
    "MarkovChainSpec",
    "Uniform",
    "WeightFunction",
    "convolve",
    "distribution_from_dict",
    "laplace",
    "mixture",
    "simulate_path",
    "stationary_distribution",
    "expect_phi",
    "gaussian_wde_closed",
    "wde",
    "we_discrete",
    "weighted_kl",
    "CheckReport",
    "gaussian_max_check",
    "gibbs_check",
    "hadamard_weighted_check",
    "kyfan_gap",
    "rwe_convexity_gap",
    "we_concavity_gap",
]
