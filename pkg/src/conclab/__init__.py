"""conclab: a desk-scale laboratory for concentration-of-measure experiments
on product measures -- semigroup evaluators, Orlicz-norm estimators,
inequality checkers with confidence-interval verdicts, and extreme-value
scaling curves."""

from . import (
    cli,
    estimators,
    extremes,
    functions,
    inequalities,
    measures,
    reports,
    semigroup,
    upper_tail,
)
from .estimators import EstimateWithCI, MCParams, phi_eval
from .functions import TestFunction, builtin
from .inequalities import BoundConstants, constants
from .measures import (
    Potential1D,
    ProductMeasure,
    SampleBatch,
    make_exponential,
    make_gaussian,
    make_general,
    sample,
)
from .reports import InequalityReport
from .semigroup import SemigroupOperator, make_operator

__version__ = "0.1.0"

__all__ = [
    "EstimateWithCI",
    "MCParams",
    "phi_eval",
    "TestFunction",
    "builtin",
    "BoundConstants",
    "constants",
    "Potential1D",
    "ProductMeasure",
    "SampleBatch",
    "make_exponential",
    "make_gaussian",
    "make_general",
    "sample",
    "InequalityReport",
    "SemigroupOperator",
    "make_operator",
    "__version__",
]
