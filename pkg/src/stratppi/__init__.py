"""Stratified prediction-powered inference for mean estimation."""

from .core import (
    CapabilityError,
    ConfigError,
    DataError,
    DomainError,
    EstimatorConfig,
    InfeasibleAllocationError,
    InsufficientDataError,
    IntervalResult,
    LabeledPoint,
    StratifiedDataset,
    Stratification,
    StratPPIError,
    StratumData,
    normal_quantile,
    sample_cov,
    sample_mean_var,
)
from .estimators import MeanLoss, classical_mean_ci, ppi_pp_ci, stratppi_ci, stratppi_point_estimate
from .sampling import Pool, SyntheticScenario, integer_allocation, quantile_stratify, scenario
from .simulation import (
    TrialReport,
    effective_sample_size,
    percent_reduction,
    run_real_data_sweep,
    run_simulation,
)
from .tuning import (
    AllocationPlan,
    StratumOracle,
    heuristic_rho,
    heuristic_sigma,
    heuristic_sigma_binary,
    optimal_rho,
    tune_lambda_mean,
)

__version__ = "0.1.0"
