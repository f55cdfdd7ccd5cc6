"""Restricted Boltzmann Machines with Bernoulli or Gaussian visible units,
trained by contrastive divergence under either Euclidean (SGD / Nesterov) or
sign/spectral (non-Euclidean) update rules, with exact small-model oracles
and a numerical bound-verification harness."""

from .config import ConfigError, RunConfig, build_policy, load_config, parse_config
from .data import (
    Dataset,
    DatasetFormatError,
    binarize,
    generate_synthetic,
    load_idx,
    load_matrix_file,
    minibatches,
    save_matrix_file,
)
from .gradient import GradientSet, estimate_gradients, exact_gradients
from .linalg import SvdResult, randomized_svd, schatten_norm, svd, vector_norm
from .model import (
    Covariance,
    OracleScaleError,
    RbmParams,
    energy,
    exact_log_partition,
    exact_loss,
    hidden_probs,
    load_checkpoint,
    neg_data_term,
    reconstruction_sse,
    save_checkpoint,
    visible_conditional,
)
from .optimizer import (
    BlockPolicy,
    MomentumState,
    OptimizerPolicy,
    SsdSvdMode,
    StepSchedule,
    apply_update,
    project_weight_norm,
    sgd_step,
    ssd_matrix_step,
    ssd_vector_step,
    step_size,
)
from .sampler import ChainState, PhaseStats, cd_k, gibbs_step, pcd, sample_hidden, sample_visible
from .train import MetricsRecord, TrainResult, bench, evaluate, train
from .verify import BoundReport, run_bound_suite

__version__ = "0.1.0"
