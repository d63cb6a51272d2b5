"""Image-to-action inverse dynamics model (arm-decoupled, direction-aware decoder)."""

from .config import AugmentConfig, DadConfig, EncoderConfig, MlpRegressorConfig, ModelConfig, TrainConfig
from .inference import IdmPredictor, ResolutionError
from .layers import (
    ANGLES,
    DILATIONS,
    DeformableConv,
    DilatedBranch,
    aggregate_branches,
    angle_pool,
    modulated_deform_conv,
    rotate_features,
)
from .model import DadHead, IdmModel, MlpRegressorHead, PatchEncoder, assemble_action, clamp_grippers, split_action
from .preprocess import augment, weighted_smooth_l1
from .train import TrainingAborted, load_checkpoint, prepare_inputs, save_checkpoint, train_idm

__all__ = [
    "ANGLES",
    "AugmentConfig",
    "DILATIONS",
    "DadConfig",
    "DadHead",
    "DeformableConv",
    "DilatedBranch",
    "EncoderConfig",
    "IdmModel",
    "IdmPredictor",
    "MlpRegressorConfig",
    "MlpRegressorHead",
    "ModelConfig",
    "PatchEncoder",
    "ResolutionError",
    "TrainConfig",
    "TrainingAborted",
    "aggregate_branches",
    "angle_pool",
    "assemble_action",
    "augment",
    "clamp_grippers",
    "load_checkpoint",
    "modulated_deform_conv",
    "prepare_inputs",
    "rotate_features",
    "save_checkpoint",
    "split_action",
    "train_idm",
    "weighted_smooth_l1",
]
