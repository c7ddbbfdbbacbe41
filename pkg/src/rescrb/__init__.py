"""Constrained semiparametric Cramér-Rao bounds for RES distributions.

Sampling of real elliptically symmetric data, constrained scatter
M-estimators, closed-form CCRB/CSCRB, and Monte Carlo efficiency sweeps.
"""

from .bounds import BoundReport, bound_report, ccrb, cscrb
from .estimators import FixedPointOptions, WeightSpec, cscm, m_estimate, sample_mean
from .mc_harness import ExperimentConfig, ResultRow, run_experiment, write_csv
from .res_model import (
    GeneralizedGaussian, RESParams, StudentT, calibrate_scale, moments, sample_res,
    toeplitz_scatter,
)
from .special import RngStream

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "ExperimentConfig",
    "FixedPointOptions",
    "GeneralizedGaussian",
    "RESParams",
    "ResultRow",
    "RngStream",
    "StudentT",
    "WeightSpec",
    "bound_report",
    "calibrate_scale",
    "ccrb",
    "cscm",
    "cscrb",
    "m_estimate",
    "moments",
    "run_experiment",
    "sample_mean",
    "sample_res",
    "toeplitz_scatter",
    "write_csv",
]
