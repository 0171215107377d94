"""Calibrated animal re-identification with explicit spatiotemporal priors.

The package separates what an animal looks like (a calibrated foreground
likelihood) from where and when it tends to appear (background priors), then
fuses the two into a posterior. Keeping the factors explicit means the
location and time assumptions can be inspected, swapped, or switched off,
instead of being baked invisibly into a single end-to-end score.
"""

from .calibration import (
    CalibrationReport,
    LogitsOutput,
    expected_calibration_error,
    fit_global_temperature,
    per_instance_softmax,
    pits_loss,
    pits_loss_grad,
    tempered_softmax,
)
from .classifier import (
    BackgroundLocationModel,
    PitsModel,
    TrainConfig,
    features_from,
    load_background_model,
    load_model,
    save_background_model,
    save_model,
    train,
    train_background_model,
)
from .data import (
    Dataset,
    GridSpec,
    IdentityCatalog,
    Location,
    Observation,
    build_catalog,
    load_dataset,
    load_observations,
    save_dataset,
    save_observations,
    target_temperature,
    temporal_split,
    validate_dataset,
)
from .errors import (
    ConfigError,
    ParseError,
    SchemaError,
    SimulationError,
    SplitError,
    TrainingError,
)
from .evaluation import (
    ExperimentReport,
    load_report,
    new_location_accuracy,
    overall_accuracy,
    run_experiment,
    run_row_suite,
    save_report,
    score_predictions,
    train_location_pairs,
)
from .fusion import Prediction, fuse, read_predictions, sequential_infer, write_predictions
from .priors import (
    PriorConfig,
    PriorState,
    home_location_prior,
    init_state,
    load_state,
    migrating_location_prior,
    prior_vector,
    resolve_location,
    save_state,
    time_decay_prior,
    uniform_prior,
    update_last_seen,
    update_location,
)
from .simulate import PRESETS, SimConfig, generate, lynx_like, turtle_like

__version__ = "0.1.0"

__all__ = [
    "BackgroundLocationModel",
    "CalibrationReport",
    "ConfigError",
    "Dataset",
    "ExperimentReport",
    "GridSpec",
    "IdentityCatalog",
    "Location",
    "LogitsOutput",
    "Observation",
    "ParseError",
    "PitsModel",
    "Prediction",
    "PriorConfig",
    "PriorState",
    "PRESETS",
    "SchemaError",
    "SimConfig",
    "SimulationError",
    "SplitError",
    "TrainConfig",
    "TrainingError",
    "build_catalog",
    "expected_calibration_error",
    "features_from",
    "fit_global_temperature",
    "fuse",
    "generate",
    "home_location_prior",
    "init_state",
    "load_background_model",
    "load_dataset",
    "load_model",
    "load_observations",
    "load_report",
    "load_state",
    "lynx_like",
    "migrating_location_prior",
    "new_location_accuracy",
    "overall_accuracy",
    "per_instance_softmax",
    "pits_loss",
    "pits_loss_grad",
    "prior_vector",
    "read_predictions",
    "resolve_location",
    "run_experiment",
    "run_row_suite",
    "save_background_model",
    "save_dataset",
    "save_model",
    "save_observations",
    "save_report",
    "save_state",
    "score_predictions",
    "sequential_infer",
    "target_temperature",
    "tempered_softmax",
    "temporal_split",
    "time_decay_prior",
    "train",
    "train_background_model",
    "train_location_pairs",
    "turtle_like",
    "uniform_prior",
    "update_last_seen",
    "update_location",
    "validate_dataset",
    "write_predictions",
]
