"""Sequential estimation of hierarchical factor models.

Fit one level at a time: estimate a flat CFA, score its factors, then
treat those scores as the observed variables of the next level. The
package also provides the simultaneous (all-levels-at-once) estimator,
factor scoring, fit and recovery metrics, a simulation generator for
the benchmark designs, and a replication harness with reporting.
"""

from .errors import (
    AllReplicationsFailedError,
    DataError,
    ModelSyntaxError,
    ScoringError,
    SequentialStageError,
)
from .estimator import (
    DataMatrix,
    FitOptions,
    FitStatus,
    FittedModel,
    fit_cfa,
    fit_traditional,
    implied_covariance,
    ml_discrepancy,
    sample_covariance,
)
from .metrics import (
    FitIndexBlock,
    PairedTestResult,
    fit_indices,
    indices_from_chi_square,
    mcdonald_omega,
    omega_per_factor,
    paired_t_test,
    pearson_r,
    rmse_aligned,
)
from .model import (
    ComplexityReport,
    FactorDef,
    ModelSpec,
    param_complexity,
    parse_model,
    serialize_model,
    stage_decomposition,
)
from .scoring import (
    FactorScores,
    bartlett_unbiasedness_gap,
    bartlett_weights,
    compute_scores,
    regression_weights,
    scores_to_csv,
)
from .sequential import (
    PropagationReport,
    SequentialResult,
    fit_sequential,
    mean_index,
    propagated_covariance,
    sequential_to_json,
)
from .simgen import (
    Design,
    SimCondition,
    SimulatedDataset,
    builtin_design,
    generate,
    load_dataset_csv,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AllReplicationsFailedError",
    "ComplexityReport",
    "DataError",
    "DataMatrix",
    "Design",
    "FactorDef",
    "FactorScores",
    "FitIndexBlock",
    "FitOptions",
    "FitStatus",
    "FittedModel",
    "ModelSpec",
    "ModelSyntaxError",
    "PairedTestResult",
    "PropagationReport",
    "ScoringError",
    "SequentialResult",
    "SequentialStageError",
    "SimCondition",
    "SimulatedDataset",
    "bartlett_unbiasedness_gap",
    "bartlett_weights",
    "builtin_design",
    "compute_scores",
    "fit_cfa",
    "fit_indices",
    "fit_sequential",
    "fit_traditional",
    "generate",
    "implied_covariance",
    "indices_from_chi_square",
    "load_dataset_csv",
    "mcdonald_omega",
    "mean_index",
    "ml_discrepancy",
    "omega_per_factor",
    "paired_t_test",
    "param_complexity",
    "parse_model",
    "pearson_r",
    "propagated_covariance",
    "regression_weights",
    "rmse_aligned",
    "sample_covariance",
    "scores_to_csv",
    "sequential_to_json",
    "serialize_model",
    "stage_decomposition",
    "write_dataset",
]
