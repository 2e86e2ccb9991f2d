from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PRESETS, ModelConfig, TrainConfig, preset_config
from .decoding import DecodeResult, decode, decode_batch
from .network import DualDecoderModel
from .training import (
    Batch,
    EncodedSample,
    GradCheckResult,
    Trainer,
    batch_iterator,
    collate,
    encode_record,
    grad_check,
    loss_terms,
    lr_schedule,
    token_accuracy,
)

__all__ = [
    "Batch",
    "Checkpoint",
    "DecodeResult",
    "DualDecoderModel",
    "EncodedSample",
    "GradCheckResult",
    "ModelConfig",
    "PRESETS",
    "TrainConfig",
    "Trainer",
    "batch_iterator",
    "collate",
    "decode",
    "decode_batch",
    "encode_record",
    "grad_check",
    "load_checkpoint",
    "loss_terms",
    "lr_schedule",
    "preset_config",
    "save_checkpoint",
    "token_accuracy",
]
