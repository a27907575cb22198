from calig.encoder.checkpoint import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointIntegrityError,
    load_checkpoint,
    save_checkpoint,
)
from calig.encoder.model import (
    ConfigError,
    EncoderConfig,
    EncoderModel,
    ForwardTrace,
    InputError,
    batch_logits,
    forward,
    forward_from_hidden,
    softmax,
)
from calig.encoder.train import TrainHyperparams, TrainingDivergence, TrainResult, accuracy, train_synthetic

__all__ = [
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointIntegrityError",
    "ConfigError",
    "EncoderConfig",
    "EncoderModel",
    "ForwardTrace",
    "InputError",
    "TrainHyperparams",
    "TrainResult",
    "TrainingDivergence",
    "accuracy",
    "batch_logits",
    "forward",
    "forward_from_hidden",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
    "train_synthetic",
]
