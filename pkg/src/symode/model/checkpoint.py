"""Versioned, byte-deterministic checkpoint container.

Layout: one JSON header line (format version, model config, vocabulary
text + hash, step counter, tensor manifest), then the raw little-endian
bytes of every parameter in manifest order.  Loading refuses a file whose
stored vocabulary hash does not match its vocabulary text, or an
``expected_vocab`` passed by the caller.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..tokenization import Vocabulary
from .config import ModelConfig
from .network import DualDecoderModel

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

_FORMAT = "symode-checkpoint"
_VERSION = 1


@dataclass
class Checkpoint:
    model: DualDecoderModel
    vocab: Vocabulary
    step: int
    extra: dict


def save_checkpoint(
    path,
    model: DualDecoderModel,
    vocab: Vocabulary,
    step: int,
    extra: dict | None = None,
) -> None:
    tensors = []
    blobs = []
    for name, p in model.named_parameters():
        arr = p.detach().cpu().numpy()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.tobytes())
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "model_config": asdict(model.config),
        "vocab_text": vocab.to_text(),
        "vocab_hash": vocab.hash,
        "step": int(step),
        "extra": extra or {},
        "tensors": tensors,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_vocab: Vocabulary | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    if header.get("format") != _FORMAT or header.get("version") != _VERSION:
        raise ValueError(f"{path} is not a version-{_VERSION} {_FORMAT} file")
    vocab_text = header["vocab_text"]
    if hashlib.sha256(vocab_text.encode()).hexdigest() != header["vocab_hash"]:
        raise ValueError("checkpoint vocabulary hash does not match its token list")
    if expected_vocab is not None and expected_vocab.hash != header["vocab_hash"]:
        raise ValueError(
            "refusing to load: checkpoint vocabulary hash "
            f"{header['vocab_hash'][:12]}... does not match the expected vocabulary"
        )
    vocab = Vocabulary.from_text(vocab_text)
    config = ModelConfig(**header["model_config"])
    model = DualDecoderModel(config, len(vocab))

    offset = 0
    state = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        state[spec["name"]] = torch.from_numpy(arr.copy()).reshape(spec["shape"])
        offset += nbytes
    if offset != len(payload):
        raise ValueError(f"checkpoint payload has {len(payload) - offset} trailing bytes")
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in state:
                raise ValueError(f"checkpoint is missing tensor {name}")
            p.copy_(state[name])
    model.eval()
    return Checkpoint(model=model, vocab=vocab, step=int(header["step"]), extra=header.get("extra", {}))
