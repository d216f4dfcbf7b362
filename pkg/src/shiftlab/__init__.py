"""Simulation and estimation tools for the shift of a periodic signal in Gaussian white noise.

The observation ``x(t) = f(t - theta) + eps n(t)`` is handled in its
trigonometric sequence form.  The package provides minimax shrinkage
weights over Sobolev balls, the adaptive contrast estimator of the shift
together with oracle and ratio-form baselines, and Monte Carlo harnesses
for frequentist risk, Bayes risk and Van Trees lower bounds.
"""

from .errors import (
    DegenerateEstimateError,
    InvalidInputError,
    ShiftLabError,
    SingularVarianceError,
    SolverFailureError,
)
from .estimators import EstimatorSpec, SearchOptions, estimate
from .signal_model import ParamDomain, SignalSpectrum, SobolevBall, simulate
from .streams import RandomStream
from .weights import WeightSequence

__version__ = "0.1.0"

__all__ = [
    "DegenerateEstimateError",
    "EstimatorSpec",
    "InvalidInputError",
    "ParamDomain",
    "RandomStream",
    "SearchOptions",
    "ShiftLabError",
    "SignalSpectrum",
    "SingularVarianceError",
    "SobolevBall",
    "SolverFailureError",
    "WeightSequence",
    "estimate",
    "simulate",
]
