"""Numerical Fisher-Rao geometry, second-order covariance corrections and singular learning rates."""

__version__ = "0.1.0"

from .correction import (CorrectionReport, NormalChart, build_normal_chart, correction_report, decompose,
                         p_tensor_full, p_tensor_reduced, predict_covariance, pushforward_moments)
from .expectation import ExpectationEngine, MomentTable, bartlett_residuals, default_engine, moment_table
from .geometry import GeometrySnapshot, christoffel, geometry_snapshot, riemann
from .immersion import ImmersionReport, immersion_report
from .models import (Bernoulli, CauchyLocation, CurvedGaussianEfron, DegenerateSumGaussian, GaussianMean,
                     GraphSurfaceGaussian, ParametricModel, Poisson, QuadraticReparam, get_model)
from .simulation import SimulationPlan, fit_expansion, mle_solve, simulate_covariance
from .singular import NormalCrossingSpec, null_directions, rlct, singular_report, tangent_cone

__all__ = [
    "__version__",
    "Bernoulli", "CauchyLocation", "CorrectionReport", "CurvedGaussianEfron", "DegenerateSumGaussian",
    "ExpectationEngine", "GaussianMean", "GeometrySnapshot", "GraphSurfaceGaussian", "ImmersionReport",
    "MomentTable", "NormalChart", "NormalCrossingSpec", "ParametricModel", "Poisson", "QuadraticReparam",
    "SimulationPlan", "bartlett_residuals", "build_normal_chart", "christoffel", "correction_report",
    "decompose", "default_engine", "fit_expansion", "geometry_snapshot", "get_model", "immersion_report",
    "mle_solve", "moment_table", "null_directions", "p_tensor_full", "p_tensor_reduced",
    "predict_covariance", "pushforward_moments", "riemann", "rlct", "simulate_covariance",
    "singular_report", "tangent_cone",
]
