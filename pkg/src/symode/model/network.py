"""Dual-decoder sequence model over trajectory inputs.

The encoder consumes one position per time step: the three float tokens of
each scalar are embedded and summed into a scalar embedding, a step's
``1+d`` scalar embeddings are concatenated and linearly projected to model
width (one projection per dimension d, so differently sized systems share a
backbone without zero-padded channels), and sinusoidal positions over the
step index are added.

Two structurally identical decoders with independent parameters attend to
the shared encoder output: one emits the system's prefix tokens, the other
the tokenized derivative sequence.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ModelConfig

__all__ = ["DualDecoderModel"]


def sinusoidal_table(max_len: int, width: int, dtype) -> torch.Tensor:
    position = torch.arange(max_len, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, width, 2, dtype=dtype) * (-math.log(10000.0) / width))
    table = torch.zeros(max_len, width, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, query, keyvalue, mask=None):
        # mask: bool, broadcastable to (B, heads, Lq, Lk); True = may attend
        b, lq, w = query.shape
        lk = keyvalue.shape[1]
        q = self.q_proj(query).view(b, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(keyvalue).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(keyvalue).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, lq, w)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, width: int, mult: int):
        super().__init__()
        self.inner = nn.Linear(width, mult * width)
        self.outer = nn.Linear(mult * width, width)

    def forward(self, x):
        return self.outer(torch.relu(self.inner(x)))


class EncoderLayer(nn.Module):
    def __init__(self, width, heads, ff_mult):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.ff = FeedForward(width, ff_mult)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, width, heads, ff_mult):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, heads)
        self.norm3 = nn.LayerNorm(width)
        self.ff = FeedForward(width, ff_mult)

    def forward(self, x, memory, causal_mask, memory_mask):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal_mask)
        x = x + self.cross_attn(self.norm2(x), memory, memory_mask)
        return x + self.ff(self.norm3(x))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.width, cfg.heads, cfg.ff_mult) for _ in range(cfg.dec_layers)
        )
        self.norm = nn.LayerNorm(cfg.width)

    def forward(self, x, memory, causal_mask, memory_mask):
        for layer in self.layers:
            x = layer(x, memory, causal_mask, memory_mask)
        return self.norm(x)


class DualDecoderModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        dtype = torch.float64 if config.dtype == "float64" else torch.float32
        w = config.width

        self.token_embedding = nn.Embedding(vocab_size, w)
        # one input projection per system dimension
        self.input_proj = nn.ModuleDict(
            {str(d): nn.Linear((1 + d) * w, w) for d in range(1, config.d_max + 1)}
        )
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(w, config.heads, config.ff_mult) for _ in range(config.enc_layers)
        )
        self.encoder_norm = nn.LayerNorm(w)
        self.ode_decoder = Decoder(config)
        self.der_decoder = Decoder(config)
        self.ode_head = nn.Linear(w, vocab_size)
        self.der_head = nn.Linear(w, vocab_size)

        max_pos = max(config.max_src_steps, config.max_ode_len, config.max_der_len)
        self.register_buffer("positions", sinusoidal_table(max_pos, w, torch.float64))
        self.to(dtype)

    @property
    def dtype(self):
        return self.token_embedding.weight.dtype

    def init_parameters(self, seed: int = 0) -> None:
        """Deterministic N(0, 0.02) weight init, zero biases, unit layer norms."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if p.ndim >= 2:
                    p.normal_(0.0, 0.02, generator=gen)
                elif "norm" in name and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()

    def embed_trajectory(self, grid: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Token grid ``(B, N, 1+d, 3)`` -> encoder input ``(B, N, width)``."""
        b, n, scalars, _ = grid.shape
        d = scalars - 1
        if not 1 <= d <= self.config.d_max:
            raise ValueError(f"dimension {d} outside 1..{self.config.d_max}")
        if n > self.config.max_src_steps:
            raise ValueError(f"{n} steps exceed max_src_steps {self.config.max_src_steps}")
        emb = self.token_embedding(grid).sum(dim=3)  # (B, N, 1+d, w)
        emb = emb.reshape(b, n, scalars * self.config.width)
        x = self.input_proj[str(d)](emb)
        if self.config.pos_encoding:
            x = x + self.positions[:n].to(x.dtype)
        return x * mask.unsqueeze(-1).to(x.dtype)

    def encode(self, grid: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.embed_trajectory(grid, mask)
        attn_mask = mask[:, None, None, :]  # pad steps are never attended to
        for layer in self.encoder_layers:
            x = layer(x, attn_mask)
        return self.encoder_norm(x)

    def _decode(self, decoder, head, target_prefix, memory, memory_key_mask, max_len):
        b, length = target_prefix.shape
        if length > max_len:
            raise ValueError(f"target length {length} exceeds limit {max_len}")
        x = self.token_embedding(target_prefix) * math.sqrt(self.config.width)
        x = x + self.positions[:length].to(x.dtype)
        causal = torch.ones(length, length, dtype=torch.bool, device=x.device).tril()
        hidden = decoder(x, memory, causal[None, None], memory_key_mask[:, None, None, :])
        return head(hidden)

    def decode_ode(self, target_prefix, memory, memory_key_mask):
        return self._decode(
            self.ode_decoder, self.ode_head, target_prefix, memory, memory_key_mask,
            self.config.max_ode_len,
        )

    def decode_derivative(self, target_prefix, memory, memory_key_mask):
        return self._decode(
            self.der_decoder, self.der_head, target_prefix, memory, memory_key_mask,
            self.config.max_der_len,
        )

    def forward(self, grid, mask, ode_prefix, der_prefix):
        """Teacher-forced forward pass -> (ode logits, derivative logits)."""
        memory = self.encode(grid, mask)
        ode_logits = self.decode_ode(ode_prefix, memory, mask)
        der_logits = self.decode_derivative(der_prefix, memory, mask) if der_prefix is not None else None
        return ode_logits, der_logits

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
