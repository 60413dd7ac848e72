"""Malware propagation modeling from network scan logs.

The pipeline turns raw scan-event logs into a smoothed intensity signal,
fits mechanistic, hybrid, and purely neural infection models to it through
a differentiable fixed-step integrator, compares them under ablation,
limited-data, and noise protocols, and distills the hybrid model's learned
feedback network into a short symbolic expression.
"""

from .dynamics import (
    MODEL_KINDS,
    MechanisticParams,
    RhsContext,
    context_from_series,
    initial_state,
    make_rhs,
)
from .errors import (
    CheckpointError,
    DivergenceError,
    EmptyDatasetError,
    FitFailureError,
    GradientError,
    InputError,
    PropagateError,
    StepBudgetError,
    StiffnessError,
)
from .evaluate import (
    ArmResult,
    ExperimentReport,
    MetricBundle,
    corrupt,
    metrics,
    run_ablation,
    run_forecast,
    run_noise,
    truncate_series,
)
from .ingest import (
    IntensitySeries,
    Interpolant,
    ScanEvent,
    bin_events,
    load_series_csv,
    make_interpolant,
    parse_events,
    save_series_csv,
    smooth,
    smooth_series,
    synth_events,
    synthetic_series,
)
from .integrate import SolveConfig, Trajectory, solve_adaptive, solve_fixed
from .neuralnet import MlpSpec, init_params, load_checkpoint, save_checkpoint
from .symreg import (
    MECHANISM_LABELS,
    TERM_NAMES,
    BasisDictionary,
    DesignSamples,
    SymbolicModel,
    evaluate_symbolic,
    render_expression,
    ridge_fit,
    sample_network,
    simplify,
    term_report,
)
from .train import FitResult, TrainConfig, fit, loss_and_grad, mse_loss, simulate_trajectory

__version__ = "0.1.0"

__all__ = [
    "MECHANISM_LABELS",
    "MODEL_KINDS",
    "TERM_NAMES",
    "ArmResult",
    "BasisDictionary",
    "CheckpointError",
    "DesignSamples",
    "DivergenceError",
    "EmptyDatasetError",
    "ExperimentReport",
    "FitFailureError",
    "FitResult",
    "GradientError",
    "InputError",
    "IntensitySeries",
    "Interpolant",
    "MechanisticParams",
    "MetricBundle",
    "MlpSpec",
    "PropagateError",
    "RhsContext",
    "ScanEvent",
    "SolveConfig",
    "StepBudgetError",
    "StiffnessError",
    "SymbolicModel",
    "TrainConfig",
    "Trajectory",
    "bin_events",
    "context_from_series",
    "corrupt",
    "evaluate_symbolic",
    "fit",
    "init_params",
    "initial_state",
    "load_checkpoint",
    "load_series_csv",
    "loss_and_grad",
    "make_interpolant",
    "make_rhs",
    "metrics",
    "mse_loss",
    "parse_events",
    "render_expression",
    "ridge_fit",
    "run_ablation",
    "run_forecast",
    "run_noise",
    "sample_network",
    "save_checkpoint",
    "save_series_csv",
    "simplify",
    "simulate_trajectory",
    "smooth",
    "smooth_series",
    "solve_adaptive",
    "solve_fixed",
    "synth_events",
    "synthetic_series",
    "term_report",
    "truncate_series",
    "__version__",
]
