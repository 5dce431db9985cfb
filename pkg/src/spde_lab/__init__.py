"""Finite-difference and Monte-Carlo tools for parabolic SPDEs with gradient noise on bounded and half-space domains."""

__version__ = "0.1.0"

from .domain import DomainSpec, Grid, build_grid, check_compatibility
from .errors import (
    AnalysisError,
    ConfigurationError,
    ContractViolation,
    EvaluationError,
    NumericalError,
    PreconditionError,
    SpdeLabError,
)
from .fields import CoefficientSet, ParabolicityBounds, coefficients_from_dict, verify_parabolicity
from .noise import TimeGrid, WienerBundle, sample_wiener_bundle, translation_path
from .solver import (
    Problem,
    SolutionField,
    solve_decomposition,
    solve_direct,
    solve_heat_reflection,
    solve_random_pde,
    solve_semilinear_picard,
    step_direct,
    translate_field,
)

__all__ = [
    "AnalysisError",
    "CoefficientSet",
    "ConfigurationError",
    "ContractViolation",
    "DomainSpec",
    "EvaluationError",
    "Grid",
    "NumericalError",
    "ParabolicityBounds",
    "PreconditionError",
    "Problem",
    "SolutionField",
    "SpdeLabError",
    "TimeGrid",
    "WienerBundle",
    "build_grid",
    "check_compatibility",
    "coefficients_from_dict",
    "sample_wiener_bundle",
    "solve_decomposition",
    "solve_direct",
    "solve_heat_reflection",
    "solve_random_pde",
    "solve_semilinear_picard",
    "step_direct",
    "translate_field",
    "translation_path",
    "verify_parabolicity",
]
