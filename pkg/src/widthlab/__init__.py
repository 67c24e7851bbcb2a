"""Width-scaling laboratory for MLP parameterizations.

Tools for studying how training dynamics scale with hidden width:
layerwise initialization/learning-rate presets, an instrumented training
loop, coordinate-check diagnostics (update decompositions, alignment
ratios, effective rank), learning-rate transfer sweeps, and an exactly
solvable two-layer linear model.
"""

from .data import (
    Dataset,
    batch_stream,
    gen_multi_index,
    idx_image_dataset,
    load_cifar10_bin,
    load_dataset,
    load_idx,
    save_dataset,
)
from .diagnostics import (
    DiagnosticRecord,
    LayerDiagnostics,
    ProbeSnapshot,
    activation_cosine,
    activation_sparsity,
    alignment_op,
    alignment_rms,
    compute_record,
    effective_rank,
    rcc,
)
from .linalg import (
    PowerLawFit,
    SpectralEstimate,
    power_law_fit,
    rms_matrix_norm,
    rms_norm,
    rms_op_norm,
    spectral_norm,
)
from .net import (
    ForwardTrace,
    NetworkState,
    backward,
    forward,
    init_network,
    layer_dims,
    load_weights,
    make_activation,
    save_weights,
    sigma_gelu,
    sigma_gelu_prime,
)
from .params import (
    LayerRole,
    LayerRule,
    Optimizer,
    ParamSpec,
    PresetName,
    layer_roles,
    preset_table_markdown,
    resolve_preset,
    scaled_init_variance,
    scaled_lr,
)
from .rng import Rng, gaussian_matrix
from .sweeps import (
    CoordcheckStudy,
    ExponentReport,
    SweepGrid,
    SweepPlan,
    align_study,
    coordcheck_study,
    exponent_report,
    log_grid,
    lr_series,
    min_unstable_lr,
    optimal_lr,
    run_single,
    run_sweep,
)
from .diagnostics import diagnostics_to_csv
from .data import teacher_score
from .training import (
    CE_LOSS_CAP,
    AdamConfig,
    AdamState,
    Loss,
    RunMetrics,
    StepRow,
    accuracy,
    adam_step,
    log_sum_exp,
    loss_and_chi,
    metrics_to_csv,
    run_summary,
    sgd_step,
    softmax,
    train,
)
from .uvmodel import (
    UvKind,
    UvParam,
    UvState,
    UvWeights,
    loss_change_sign,
    loss_decreases,
    sharpness_change_sign,
    sharpness_increases,
    step_eta,
    uv_explicit_train,
    uv_gk_limit_step,
    uv_gk_step,
    uv_init,
    uv_limit_distance,
    uv_limit_k0,
    uv_max_stable_lr,
    uv_step,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "batch_stream",
    "gen_multi_index",
    "idx_image_dataset",
    "load_cifar10_bin",
    "load_dataset",
    "load_idx",
    "save_dataset",
    "DiagnosticRecord",
    "LayerDiagnostics",
    "ProbeSnapshot",
    "activation_cosine",
    "activation_sparsity",
    "alignment_op",
    "alignment_rms",
    "compute_record",
    "effective_rank",
    "rcc",
    "PowerLawFit",
    "SpectralEstimate",
    "power_law_fit",
    "rms_matrix_norm",
    "rms_norm",
    "rms_op_norm",
    "spectral_norm",
    "ForwardTrace",
    "NetworkState",
    "backward",
    "forward",
    "init_network",
    "layer_dims",
    "load_weights",
    "make_activation",
    "save_weights",
    "sigma_gelu",
    "sigma_gelu_prime",
    "LayerRole",
    "LayerRule",
    "Optimizer",
    "ParamSpec",
    "PresetName",
    "layer_roles",
    "preset_table_markdown",
    "resolve_preset",
    "scaled_init_variance",
    "scaled_lr",
    "Rng",
    "gaussian_matrix",
    "CoordcheckStudy",
    "ExponentReport",
    "SweepGrid",
    "SweepPlan",
    "align_study",
    "coordcheck_study",
    "exponent_report",
    "log_grid",
    "lr_series",
    "min_unstable_lr",
    "optimal_lr",
    "run_single",
    "run_sweep",
    "AdamConfig",
    "AdamState",
    "CE_LOSS_CAP",
    "Loss",
    "RunMetrics",
    "StepRow",
    "accuracy",
    "adam_step",
    "diagnostics_to_csv",
    "log_sum_exp",
    "loss_and_chi",
    "metrics_to_csv",
    "run_summary",
    "sgd_step",
    "softmax",
    "teacher_score",
    "train",
    "UvKind",
    "UvParam",
    "UvState",
    "UvWeights",
    "loss_change_sign",
    "loss_decreases",
    "sharpness_change_sign",
    "sharpness_increases",
    "step_eta",
    "uv_explicit_train",
    "uv_gk_limit_step",
    "uv_gk_step",
    "uv_init",
    "uv_limit_distance",
    "uv_limit_k0",
    "uv_max_stable_lr",
    "uv_step",
    "__version__",
]
