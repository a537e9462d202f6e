"""Federated learning with user-level differential privacy, bounded local
update regularization (BLUR) and local update sparsification (LUS)."""

__version__ = "0.1.0"

from .accountant import (
    CalibrationResult,
    PrivacyLedger,
    calibrate_sigma,
    compose_and_convert,
    rdp_gaussian,
    rdp_subsampled_gaussian,
)
from .blur import blur_gradient, blur_penalty, discount_trace
from .data import AgentShard, Dataset, PartitionSpec, generate_synthetic, load_csv, partition
from .errors import AgentFailure, CalibrationError, ConfigError, DataError, QueryError
from .federation import (
    RoundMetrics,
    TrainConfig,
    aggregate,
    local_update,
    run_experiment,
    sample_cohort,
    theorem6_diagnostics,
)
from .lus import SparsityConfig, build_mask, sparsify, utility_cost
from .mechanism import DpConfig, add_gaussian_noise, clip, mse_bound
from .nn import MlpModel, Sample, backward, forward_loss
from .params import ParamVector
