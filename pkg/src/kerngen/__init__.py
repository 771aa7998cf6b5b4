"""Kernel-distance training of two-layer generative networks.

A generator Y = g(B d(A Z + a) + b) is trained to match a data distribution
by descending a Gaussian-kernel two-sample loss, using rank-one per-sample
gradients, a delayed second sample, and per-entry gradient-power
normalization. A small stochastic-approximation lab reproduces the
supporting SGD-variant experiments, and a CLI wraps training, sampling,
scoring, and the benchmark.
"""

from .dataio import (
    CheckpointError,
    Dataset,
    DatasetError,
    latent_batch,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    write_csv,
    write_rawf64,
)
from .generator import (
    BackpropPair,
    GeneratorParams,
    GradPower,
    LayerCache,
    NetShape,
    backprop_pair,
    forward,
    init_params,
    layer_gradients,
    outer_grad,
)
from .kernels import (
    KernelSpec,
    SampleSet,
    gaussian_kernel,
    gram_matrix,
    kernel_grad_first,
    mmd_score,
    triple_loss,
)
from .sa_lab import (
    ComparisonReport,
    RegressionModel,
    SAVariant,
    StochasticObjective,
    average_trajectory,
    compare_variants,
    predicted_steady_state,
    regression_objective,
    relative_diff_power,
    run_variant,
    solve_lyapunov,
    steady_state_start,
    write_bench_csv,
)
from .trainer import (
    DelayedSample,
    TracePoint,
    TrainConfig,
    TrainerState,
    TrainingDiverged,
    generate,
    init_state,
    read_trace_csv,
    step_batched,
    step_final,
    step_preliminary,
    train,
    train_state,
    write_trace_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BackpropPair",
    "CheckpointError",
    "ComparisonReport",
    "Dataset",
    "DatasetError",
    "DelayedSample",
    "GeneratorParams",
    "GradPower",
    "KernelSpec",
    "LayerCache",
    "NetShape",
    "RegressionModel",
    "SAVariant",
    "SampleSet",
    "StochasticObjective",
    "TracePoint",
    "TrainConfig",
    "TrainerState",
    "TrainingDiverged",
    "average_trajectory",
    "backprop_pair",
    "compare_variants",
    "forward",
    "gaussian_kernel",
    "generate",
    "gram_matrix",
    "init_params",
    "init_state",
    "kernel_grad_first",
    "latent_batch",
    "layer_gradients",
    "load_checkpoint",
    "load_dataset",
    "mmd_score",
    "outer_grad",
    "predicted_steady_state",
    "read_trace_csv",
    "regression_objective",
    "relative_diff_power",
    "run_variant",
    "save_checkpoint",
    "solve_lyapunov",
    "steady_state_start",
    "step_batched",
    "step_final",
    "step_preliminary",
    "train",
    "train_state",
    "triple_loss",
    "write_bench_csv",
    "write_csv",
    "write_rawf64",
    "write_trace_csv",
]
