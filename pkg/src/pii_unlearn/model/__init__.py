from pii_unlearn.model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from pii_unlearn.model.decode import DecodeConfig, DecodeMode, continuation_text, generate
from pii_unlearn.model.lm import (
    Batch,
    LMTrainConfig,
    TrainingError,
    label_accuracy,
    length_grouped_batches,
    mean_token_ce,
    pad_batch,
    perplexity,
    token_losses,
    train_lm,
)
from pii_unlearn.model.transformer import (
    ConfigError,
    LengthError,
    LoraAdapter,
    ModelConfig,
    Parameters,
    TargetSelector,
    forward,
    init_adapter,
    init_model,
)

__all__ = [
    "Batch",
    "CheckpointError",
    "ConfigError",
    "DecodeConfig",
    "DecodeMode",
    "LMTrainConfig",
    "LengthError",
    "LoraAdapter",
    "ModelConfig",
    "Parameters",
    "TargetSelector",
    "TrainingError",
    "continuation_text",
    "forward",
    "generate",
    "init_adapter",
    "init_model",
    "label_accuracy",
    "length_grouped_batches",
    "load_checkpoint",
    "mean_token_ce",
    "pad_batch",
    "perplexity",
    "save_checkpoint",
    "token_losses",
    "train_lm",
]
