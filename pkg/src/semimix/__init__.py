"""Semi-supervised two-component mixture test for quantitative traits."""

__version__ = "0.1.0"

from .distributions import Family, FamilySpec, ParamSet
from .em import Dataset, EmConfig, FitResult, fit_mixture, fit_null, lr_statistic
from .errors import (
    DegenerateVarianceError,
    DomainError,
    EstimationError,
    InputError,
    NumericalError,
    SemimixError,
    UndefinedStatisticError,
)
from .mixtest import Method, Status, TestConfig, TestResult, mixture_test, p_value

__all__ = [
    "Dataset",
    "DegenerateVarianceError",
    "DomainError",
    "EmConfig",
    "EstimationError",
    "Family",
    "FamilySpec",
    "FitResult",
    "InputError",
    "Method",
    "NumericalError",
    "ParamSet",
    "SemimixError",
    "Status",
    "TestConfig",
    "TestResult",
    "UndefinedStatisticError",
    "fit_mixture",
    "fit_null",
    "lr_statistic",
    "mixture_test",
    "p_value",
]
