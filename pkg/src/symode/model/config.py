"""Model and training configuration, with paper-scale and toy-scale presets."""

from __future__ import annotations

from dataclasses import dataclass, replace

__all__ = ["ModelConfig", "TrainConfig", "PRESETS", "preset_config"]


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    heads: int = 2
    enc_layers: int = 2
    dec_layers: int = 2  # per decoder
    ff_mult: int = 4
    d_max: int = 4
    max_src_steps: int = 512
    max_ode_len: int = 512
    max_der_len: int = 2048
    pos_encoding: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if min(self.max_src_steps, self.max_ode_len, self.max_der_len) < 1:
            raise ValueError("sequence length limits must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


PRESETS = {
    "paper": ModelConfig(width=512, heads=16, enc_layers=4, dec_layers=12),
    "toy": ModelConfig(width=64, heads=2, enc_layers=2, dec_layers=2),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 2e-4
    floor_lr: float = 1e-7
    warmup_steps: int = 10_000
    cosine_steps: int = 300_000
    total_steps: int = 600_000
    batch_size: int = 32
    lambda_rec: float = 1.0
    lambda_der: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps <= 0 or self.cosine_steps <= 0:
            raise ValueError("warmup and cosine step counts must be positive")
        if self.peak_lr <= 0 or self.floor_lr <= 0:
            raise ValueError("learning rates must be positive")
