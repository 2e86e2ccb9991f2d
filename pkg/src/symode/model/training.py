"""Loss, learning-rate schedule, batching, the training loop and gradient checking.

Both decoders are supervised with teacher forcing; each loss term is the
mean token-level cross-entropy over non-pad target positions and the total
is ``lambda_rec * L_rec + lambda_der * L_der``.  With ``lambda_der = 0`` the
derivative decoder is skipped entirely, so its parameters (and their
optimizer moments) never move, which ablates the model to a single-decoder
baseline.

Training is deterministic: parameter init, batch order and the optimizer
are all driven by explicit seeds, and there is no dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..tokenization import TrajectoryEncoding, Vocabulary
from ..validation import check_random_state
from .config import TrainConfig
from .network import DualDecoderModel

__all__ = [
    "lr_schedule",
    "loss_terms",
    "EncodedSample",
    "Batch",
    "encode_record",
    "collate",
    "batch_iterator",
    "Trainer",
    "GradCheckResult",
    "grad_check",
    "token_accuracy",
]


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear floor->peak over the warmup, cosine peak->floor, then floor."""
    if step < 0:
        raise ValueError("step must be >= 0")
    w, c = config.warmup_steps, config.cosine_steps
    lo, hi = config.floor_lr, config.peak_lr
    if step <= w:
        return lo + (hi - lo) * (step / w)
    if step <= w + c:
        return lo + (hi - lo) * 0.5 * (1.0 + math.cos(math.pi * (step - w) / c))
    return lo


def loss_terms(
    ode_logits,
    ode_targets,
    der_logits,
    der_targets,
    lambda_rec: float,
    lambda_der: float,
    pad_id: int,
):
    """(total, L_rec, L_der); each term is mean cross-entropy over non-pad tokens."""
    l_rec = _masked_ce(ode_logits, ode_targets, pad_id)
    if der_logits is None:
        l_der = torch.zeros((), dtype=l_rec.dtype)
    else:
        l_der = _masked_ce(der_logits, der_targets, pad_id)
    total = lambda_rec * l_rec + lambda_der * l_der
    return total, l_rec, l_der


def _masked_ce(logits, targets, pad_id):
    if (targets != pad_id).sum() == 0:
        return torch.zeros((), dtype=logits.dtype)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=pad_id
    )


# --------------------------------------------------------------------------
# Samples and batches
# --------------------------------------------------------------------------


@dataclass
class EncodedSample:
    dimension: int
    src: np.ndarray  # (N, 1+d, 3) token ids
    ode: np.ndarray  # (Lo,) ids, BOS..EOS
    der: np.ndarray  # (Ld,) ids, BOS..EOS


@dataclass
class Batch:
    dimension: int
    src: torch.Tensor  # (B, N, 1+d, 3) long
    src_mask: torch.Tensor  # (B, N) bool
    ode: torch.Tensor  # (B, Lo) long
    der: torch.Tensor  # (B, Ld) long

    @property
    def size(self) -> int:
        return int(self.src.shape[0])


def encode_record(record: dict, vocab: Vocabulary) -> EncodedSample:
    """Turn one dataset record into id arrays ready for batching."""
    grid = vocab.encode_trajectory(record["times"], np.asarray(record["states"]))
    ode_ids = np.array(
        [vocab.bos_id, *(vocab.id_of(t) for t in record["system_tokens"]), vocab.eos_id],
        dtype=np.int64,
    )
    der_ids = np.array(
        vocab.encode_derivative_sequence(np.asarray(record["derivatives"])).ids,
        dtype=np.int64,
    )
    return EncodedSample(dimension=grid.dimension, src=grid.ids, ode=ode_ids, der=der_ids)


def encoding_to_sample(encoding: TrajectoryEncoding) -> EncodedSample:
    """Inference-side sample with empty targets."""
    empty = np.array([], dtype=np.int64)
    return EncodedSample(dimension=encoding.dimension, src=encoding.ids, ode=empty, der=empty)


def _pad_2d(rows: list[np.ndarray], pad_id: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return torch.from_numpy(out)


def collate(samples: list[EncodedSample], pad_id: int) -> Batch:
    d = samples[0].dimension
    if any(s.dimension != d for s in samples):
        raise ValueError("all samples in a batch must share one dimension")
    n = max(s.src.shape[0] for s in samples)
    src = np.full((len(samples), n, 1 + d, 3), pad_id, dtype=np.int64)
    mask = np.zeros((len(samples), n), dtype=bool)
    for i, s in enumerate(samples):
        src[i, : s.src.shape[0]] = s.src
        mask[i, : s.src.shape[0]] = True
    return Batch(
        dimension=d,
        src=torch.from_numpy(src),
        src_mask=torch.from_numpy(mask),
        ode=_pad_2d([s.ode for s in samples], pad_id),
        der=_pad_2d([s.der for s in samples], pad_id),
    )


def batch_iterator(samples: list[EncodedSample], batch_size: int, pad_id: int, rng):
    """Deterministic shuffled batches, grouped by system dimension."""
    rng = check_random_state(rng)
    order = rng.permutation(len(samples))
    buckets: dict[int, list[EncodedSample]] = {}
    for idx in order:
        s = samples[int(idx)]
        bucket = buckets.setdefault(s.dimension, [])
        bucket.append(s)
        if len(bucket) == batch_size:
            yield collate(bucket, pad_id)
            buckets[s.dimension] = []
    for d in sorted(buckets):
        if buckets[d]:
            yield collate(buckets[d], pad_id)


# --------------------------------------------------------------------------
# Trainer
# --------------------------------------------------------------------------


class Trainer:
    """Owns the optimizer state and the step counter for one model."""

    def __init__(self, model: DualDecoderModel, config: TrainConfig, pad_id: int):
        self.model = model
        self.config = config
        self.pad_id = pad_id
        self.step_count = 0
        self.optimizer = torch.optim.Adam(
            model.parameters(),
            lr=config.floor_lr,
            betas=(config.beta1, config.beta2),
            eps=config.adam_eps,
        )

    def compute_loss(self, batch: Batch):
        use_der = self.config.lambda_der != 0.0
        ode_logits, der_logits = self.model(
            batch.src, batch.src_mask, batch.ode[:, :-1], batch.der[:, :-1] if use_der else None
        )
        return loss_terms(
            ode_logits,
            batch.ode[:, 1:],
            der_logits,
            batch.der[:, 1:] if use_der else None,
            self.config.lambda_rec,
            self.config.lambda_der,
            self.pad_id,
        )

    def train_step(self, batch: Batch) -> dict:
        """One optimizer update; a non-finite loss rejects the step unchanged."""
        lr = lr_schedule(self.step_count, self.config)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        total, l_rec, l_der = self.compute_loss(batch)
        record = {
            "step": self.step_count,
            "lr": lr,
            "loss": float(total.detach()),
            "loss_rec": float(l_rec.detach()),
            "loss_der": float(l_der.detach()),
            "rejected": False,
        }
        if not torch.isfinite(total):
            record["rejected"] = True
            self.optimizer.zero_grad(set_to_none=True)
            return record
        total.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        record["grad_norm"] = float(grad_norm)
        self.optimizer.step()
        self.step_count += 1
        return record

    def train(self, samples: list[EncodedSample], steps: int, log_every: int = 0) -> list[dict]:
        """Cycle epochs over ``samples`` until ``steps`` accepted updates ran."""
        history = []
        epoch = 0
        while self.step_count < steps:
            rng = check_random_state(np.random.SeedSequence(self.config.seed, spawn_key=(epoch,)))
            for batch in batch_iterator(samples, self.config.batch_size, self.pad_id, rng):
                record = self.train_step(batch)
                history.append(record)
                if log_every and record["step"] % log_every == 0:
                    print(
                        f"step {record['step']:>6d}  lr {record['lr']:.2e}  "
                        f"loss {record['loss']:.4f} (rec {record['loss_rec']:.4f}, "
                        f"der {record['loss_der']:.4f})"
                    )
                if self.step_count >= steps:
                    break
            epoch += 1
        return history


def token_accuracy(logits: torch.Tensor, targets: torch.Tensor, pad_id: int) -> float:
    """Teacher-forced next-token accuracy over non-pad positions."""
    mask = targets != pad_id
    if mask.sum() == 0:
        return 1.0
    pred = logits.argmax(dim=-1)
    return float((pred[mask] == targets[mask]).double().mean())


# --------------------------------------------------------------------------
# Finite-difference gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float]
    n_checked: int


def grad_check(
    model: DualDecoderModel,
    batch: Batch,
    pad_id: int,
    eps: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
    lambda_rec: float = 1.0,
    lambda_der: float = 1.0,
    grad_transform=None,
) -> GradCheckResult:
    """Compare autograd gradients of the total loss against central differences.

    Samples at least ``n_samples`` scalar parameters, visiting every
    parameter tensor (embeddings, attention, feed-forward, both decoder
    heads); each tensor's largest-magnitude gradient entry is always among
    its samples, so a corrupted tensor cannot hide behind a near-zero draw.
    Relative error is measured against the finite-difference oracle,
    ``|a - n| / max(|n|, 1e-5)``; the floor keeps exactly-zero gradients
    comparing cleanly against finite-difference noise.
    ``grad_transform(name, grad) -> grad`` lets tests inject faults into the
    analytic side.
    """
    if model.dtype != torch.float64:
        raise ValueError("grad_check requires a float64 model")

    def closure():
        ode_logits, der_logits = model(batch.src, batch.src_mask, batch.ode[:, :-1], batch.der[:, :-1])
        total, _, _ = loss_terms(
            ode_logits, batch.ode[:, 1:], der_logits, batch.der[:, 1:],
            lambda_rec, lambda_der, pad_id,
        )
        return total

    model.zero_grad(set_to_none=True)
    closure().backward()
    analytic = {}
    for name, p in model.named_parameters():
        g = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        if grad_transform is not None:
            g = grad_transform(name, g)
        analytic[name] = g
    model.zero_grad(set_to_none=True)

    params = sorted(model.named_parameters())
    per_draw = max(1, math.ceil(n_samples / len(params)))
    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    checked = 0
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            drawn = rng.choice(flat.numel(), size=min(per_draw, flat.numel()), replace=False)
            peak = int(analytic[name].view(-1).abs().argmax())
            idx_pool = dict.fromkeys([peak, *drawn.tolist()])
            worst = 0.0
            for idx in idx_pool:
                idx = int(idx)
                orig = float(flat[idx])
                flat[idx] = orig + eps
                f_plus = float(closure())
                flat[idx] = orig - eps
                f_minus = float(closure())
                flat[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[name].view(-1)[idx])
                worst = max(worst, abs(a - numeric) / max(abs(numeric), 1e-5))
                checked += 1
            per_tensor[name] = worst
    return GradCheckResult(
        max_rel_error=max(per_tensor.values()), per_tensor=per_tensor, n_checked=checked
    )
