"""Boolean influence for robust fitting, computed classically or on a simulated BV circuit."""

__version__ = "0.1.0"

from .errors import (DegeneracyError, EstimationError, PipelineError, PrecisionError,
                     ResourceError, SolverError, UndefinedMetricError)
from .influence import (InfluenceEstimate, LinearizedProblem, feasibility_1d, feasibility_linear,
                        influence_exact, influence_quantum, influence_sampled)
from .oracle import PointFitInstance, build_bv_circuit, build_uf, preprocess
from .pipeline import AccumulationConfig, accumulate_influence, fit_fundamental, model_select, ransac_baseline

__all__ = [
    "AccumulationConfig", "DegeneracyError", "EstimationError", "InfluenceEstimate",
    "LinearizedProblem", "PipelineError", "PointFitInstance", "PrecisionError", "ResourceError",
    "SolverError", "UndefinedMetricError", "accumulate_influence", "build_bv_circuit", "build_uf",
    "feasibility_1d", "feasibility_linear", "fit_fundamental", "influence_exact", "influence_quantum",
    "influence_sampled", "model_select", "preprocess", "ransac_baseline",
]
