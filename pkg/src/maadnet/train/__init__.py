"""Training loop, optimizer, checkpoints and evaluation runs."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import METHODS, ConfigError, EvalConfig, ModelConfig, TrainConfig
from .evaluate import evaluate_model, predict, score_detections
from .loop import (
    Batch,
    Networks,
    RunReport,
    Trainer,
    TrainingData,
    TrainingDiverged,
    build_networks,
    build_optimizer,
    compute_losses,
    effective_objective,
    restore_networks,
    resume_trainer,
    run_training,
    train_step,
)
from .optim import Adam, ParamGroup, init_weights, multistep_lr

__all__ = [
    "Adam",
    "Batch",
    "CheckpointError",
    "ConfigError",
    "EvalConfig",
    "METHODS",
    "ModelConfig",
    "Networks",
    "ParamGroup",
    "RunReport",
    "TrainConfig",
    "Trainer",
    "TrainingData",
    "TrainingDiverged",
    "build_networks",
    "build_optimizer",
    "compute_losses",
    "effective_objective",
    "evaluate_model",
    "init_weights",
    "load_checkpoint",
    "multistep_lr",
    "predict",
    "restore_networks",
    "resume_trainer",
    "run_training",
    "save_checkpoint",
    "score_detections",
    "train_step",
]
