"""Autoregressive generation from the ODE decoder (greedy and beam search)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..tokenization import ROLE_ODE, TokenSequence, TrajectoryEncoding, Vocabulary
from .network import DualDecoderModel

__all__ = ["DecodeResult", "decode", "decode_batch"]


@dataclass(frozen=True)
class DecodeResult:
    sequence: TokenSequence
    truncated: bool  # True when generation hit max length without EOS
    mean_logprob: float = 0.0


def _grid_tensors(encodings: list[TrajectoryEncoding], pad_id: int):
    d = encodings[0].dimension
    if any(e.dimension != d for e in encodings):
        raise ValueError("all encodings in one decode batch must share a dimension")
    n = max(e.n_steps for e in encodings)
    grid = np.full((len(encodings), n, 1 + d, 3), pad_id, dtype=np.int64)
    mask = np.zeros((len(encodings), n), dtype=bool)
    for i, e in enumerate(encodings):
        grid[i, : e.n_steps] = e.ids
        mask[i, : e.n_steps] = True
    return torch.from_numpy(grid), torch.from_numpy(mask)


def _finalize(ids: list[int], vocab: Vocabulary) -> tuple[TokenSequence, bool]:
    if vocab.eos_id in ids[1:]:
        cut = ids.index(vocab.eos_id, 1)
        return TokenSequence(tuple(ids[: cut + 1]), ROLE_ODE), False
    return TokenSequence((*ids, vocab.eos_id), ROLE_ODE), True


def decode_batch(
    model: DualDecoderModel,
    encodings: list[TrajectoryEncoding],
    vocab: Vocabulary,
    max_len: int | None = None,
) -> list[DecodeResult]:
    """Greedy decode a batch of same-dimension trajectories."""
    max_len = model.config.max_ode_len if max_len is None else max_len
    grid, mask = _grid_tensors(encodings, vocab.pad_id)
    b = grid.shape[0]
    with torch.inference_mode():
        memory = model.encode(grid, mask)
        ys = torch.full((b, 1), vocab.bos_id, dtype=torch.long)
        finished = torch.zeros(b, dtype=torch.bool)
        logprob_sums = torch.zeros(b, dtype=torch.float64)
        lengths = torch.zeros(b, dtype=torch.long)
        while ys.shape[1] < max_len and not bool(finished.all()):
            logits = model.decode_ode(ys, memory, mask)[:, -1]
            logprobs = torch.log_softmax(logits, dim=-1)
            nxt = logits.argmax(dim=-1)
            nxt = torch.where(finished, torch.full_like(nxt, vocab.pad_id), nxt)
            step_lp = logprobs.gather(1, nxt[:, None]).squeeze(1)
            logprob_sums += torch.where(finished, torch.zeros_like(step_lp), step_lp)
            lengths += (~finished).long()
            finished |= nxt == vocab.eos_id
            ys = torch.cat([ys, nxt[:, None]], dim=1)
    results = []
    for i in range(b):
        ids = [t for t in ys[i].tolist() if t != vocab.pad_id]
        seq, truncated = _finalize(ids, vocab)
        mean_lp = float(logprob_sums[i] / max(1, int(lengths[i])))
        results.append(DecodeResult(seq, truncated, mean_lp))
    return results


def _beam_decode(
    model: DualDecoderModel,
    encoding: TrajectoryEncoding,
    vocab: Vocabulary,
    beam_size: int,
    max_len: int,
) -> DecodeResult:
    grid, mask = _grid_tensors([encoding], vocab.pad_id)
    with torch.inference_mode():
        memory = model.encode(grid, mask)
        beams = [([vocab.bos_id], 0.0, False)]  # (ids, logprob sum, finished)
        for _ in range(max_len - 1):
            alive = [b for b in beams if not b[2]]
            if not alive:
                break
            ys = torch.tensor([b[0] for b in alive], dtype=torch.long)
            mem = memory.expand(len(alive), -1, -1)
            msk = mask.expand(len(alive), -1)
            logprobs = torch.log_softmax(model.decode_ode(ys, mem, msk)[:, -1], dim=-1)
            candidates = [b for b in beams if b[2]]
            top = torch.topk(logprobs, k=min(beam_size, logprobs.shape[-1]), dim=-1)
            for (ids, lp, _), toks, lps in zip(alive, top.indices, top.values):
                for tok, tlp in zip(toks.tolist(), lps.tolist()):
                    candidates.append((ids + [tok], lp + tlp, tok == vocab.eos_id))
            # rank by mean log-probability per generated token
            candidates.sort(key=lambda b: b[1] / (len(b[0]) - 1), reverse=True)
            beams = candidates[:beam_size]
            if all(b[2] for b in beams):
                break
    ids, lp, done = beams[0]
    seq, truncated = _finalize(list(ids), vocab)
    return DecodeResult(seq, truncated or not done, lp / max(1, len(ids) - 1))


def decode(
    model: DualDecoderModel,
    encoding: TrajectoryEncoding,
    vocab: Vocabulary,
    mode: str = "greedy",
    beam_size: int = 4,
    max_len: int | None = None,
) -> DecodeResult:
    """Generate an ODE token sequence for one trajectory encoding."""
    max_len = model.config.max_ode_len if max_len is None else max_len
    if mode == "greedy":
        return decode_batch(model, [encoding], vocab, max_len)[0]
    if mode == "beam":
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        return _beam_decode(model, encoding, vocab, beam_size, max_len)
    raise ValueError(f"unknown decode mode {mode!r}")
