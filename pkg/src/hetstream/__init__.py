"""hetstream: online-updating regression for streams whose covariate set grows.

The engine compresses each arriving batch into cross-product statistics,
re-expresses earlier model phases in terms of the current parameters through
estimated projection maps, and maintains exact online-updating coefficient
estimates, residual sums of squares and F-tests without retaining raw data.
"""

from .batchstats import BatchStats, StreamSchema, compress_batch, merge
from .engine import (
    AccumulatorState,
    EstimateReport,
    HomogenizationMap,
    Phase,
    SecondWeightSpec,
    WeightSpec,
    asymptotic_covariance,
    begin_second_update,
    begin_update_phase,
    estimate,
    ingest_post_change,
    ingest_pre_change,
    naive_theta,
    new_stream,
    update_sse,
)
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    HetstreamError,
    InsufficientData,
    InvalidConfig,
    InvalidDegrees,
    InvalidSchema,
    NonConvergence,
    NonFiniteData,
    NotPositiveDefinite,
    PhaseMismatch,
    SchemaMismatch,
    SingularBatch,
    SingularMatrix,
)
from .inference import TestReport, f_cdf, f_quantile, f_statistic, numerator_factor, test_theta_zero
from .baselines import AveState, NueState
from .simlab import RawBatch, SimConfig, SimResult, gen_stream, run_bias_mse, run_power

__version__ = "0.1.0"

__all__ = [
    "AccumulatorState",
    "AveState",
    "BatchStats",
    "DimensionMismatch",
    "EmptyBatch",
    "EstimateReport",
    "HetstreamError",
    "HomogenizationMap",
    "InsufficientData",
    "InvalidConfig",
    "InvalidDegrees",
    "InvalidSchema",
    "NonConvergence",
    "NonFiniteData",
    "NotPositiveDefinite",
    "NueState",
    "Phase",
    "PhaseMismatch",
    "RawBatch",
    "SchemaMismatch",
    "SecondWeightSpec",
    "SimConfig",
    "SimResult",
    "SingularBatch",
    "SingularMatrix",
    "StreamSchema",
    "TestReport",
    "WeightSpec",
    "asymptotic_covariance",
    "begin_second_update",
    "begin_update_phase",
    "compress_batch",
    "estimate",
    "f_cdf",
    "f_quantile",
    "f_statistic",
    "gen_stream",
    "ingest_post_change",
    "ingest_pre_change",
    "merge",
    "naive_theta",
    "new_stream",
    "numerator_factor",
    "run_bias_mse",
    "run_power",
    "test_theta_zero",
    "update_sse",
]
