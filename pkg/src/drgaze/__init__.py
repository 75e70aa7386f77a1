"""Differential-residual gaze estimation toolkit.

Trains and evaluates appearance-based 3D gaze regressors that pair each test
eye image with a same-subject guidance image, decompose the prediction into a
plain regression plus an auxiliary differential correction, and combine angle
and L1 objectives with tunable weights. Ships a synthetic dataset generator,
guidance-noise robustness protocols, a leave-one-person-out harness, weight
sweeps, an ablation battery, and a CLI.
"""

from ._version import __version__
from .data import (
    Pair,
    PairSampler,
    Sample,
    inject_noise,
    load_dataset,
    save_dataset,
    split_samples,
    with_noisy_fraction,
)
from .errors import (
    CheckpointError,
    DataError,
    DegenerateOutputError,
    GazeToolkitError,
    MissingLabelError,
    NumericError,
    ShapeError,
    UsageError,
)
from .estimator import GazeEstimator
from .evaluation import (
    EvalReport,
    NoiseDistanceResult,
    SweepResult,
    ablation_battery,
    evaluate,
    leave_one_person_out,
    noise_distance,
    sweep_alpha_beta,
)
from .geometry import angular_error, pitch_yaw_to_vector, unit_vector, vector_to_pitch_yaw
from .losses import LossWeights, l_new, l_original, la, lb, total_loss
from .models import BackboneConfig, ModelOutput, ModelVariant, build_model
from .synth import synth_generate
from .training import TrainConfig, load_checkpoint, lr_schedule, save_checkpoint, train

__all__ = [
    "__version__",
    "Pair",
    "PairSampler",
    "Sample",
    "inject_noise",
    "load_dataset",
    "save_dataset",
    "split_samples",
    "with_noisy_fraction",
    "CheckpointError",
    "DataError",
    "DegenerateOutputError",
    "GazeToolkitError",
    "MissingLabelError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "GazeEstimator",
    "EvalReport",
    "NoiseDistanceResult",
    "SweepResult",
    "ablation_battery",
    "evaluate",
    "leave_one_person_out",
    "noise_distance",
    "sweep_alpha_beta",
    "angular_error",
    "pitch_yaw_to_vector",
    "unit_vector",
    "vector_to_pitch_yaw",
    "LossWeights",
    "l_new",
    "l_original",
    "la",
    "lb",
    "total_loss",
    "BackboneConfig",
    "ModelOutput",
    "ModelVariant",
    "build_model",
    "synth_generate",
    "TrainConfig",
    "load_checkpoint",
    "lr_schedule",
    "save_checkpoint",
    "train",
]
