"""Symbolic inference from real CSV time series.

The series is resampled to a uniform grid (linear interpolation), each value
column is normalized to zero mean / unit variance and time is rescaled to
the training span, the model decodes a system in normalized coordinates,
and the result is de-normalized symbolically so the returned equations are
in the data's original units: with ``z = (x - mu) / s`` and ``tau = t / c``,
``dx_i/dt = (s_i / c) * g_i((x - mu) / s)``.
"""

from __future__ import annotations

import csv as csv_module
from dataclasses import dataclass

import numpy as np

from ..expressions import OdeSystem, const, mul, sub, substitute, var
from ..integrate import IvpConfig, Trajectory, solve_ivp
from ..metrics import R2_FAILURE, r_squared
from ..tokenization import DecodingError

__all__ = ["CsvInference", "infer_from_csv", "read_time_series"]


@dataclass(frozen=True)
class CsvInference:
    system: OdeSystem | None  # de-normalized, original units
    normalized_system: OdeSystem | None  # raw model output
    r2: float
    normalization: dict
    failures: tuple[str, ...]
    column_names: tuple[str, ...]


def read_time_series(path, columns=None):
    """Load (times, states, value-column names) from a CSV file.

    ``columns`` selects the time column followed by the value columns, as
    header names or zero-based indices; default is all columns in order.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv_module.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ValueError(f"{path} is empty")

    def numeric(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    header = None
    if not all(numeric(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{path} has a header but no data rows")

    n_cols = len(rows[0])
    if columns is None:
        indices = list(range(n_cols))
        names = header if header is not None else [f"col{i}" for i in range(n_cols)]
    else:
        indices, names = [], []
        for spec in columns:
            if isinstance(spec, int) or (isinstance(spec, str) and spec.lstrip("-").isdigit()):
                idx = int(spec)
            else:
                if header is None:
                    raise ValueError(f"column {spec!r} requested by name but the CSV has no header")
                try:
                    idx = header.index(spec)
                except ValueError:
                    raise ValueError(f"column {spec!r} not in CSV header {header}") from None
            indices.append(idx)
            names.append(header[idx] if header is not None else f"col{idx}")
    if len(indices) < 2:
        raise ValueError("need a time column plus at least one value column")

    data = np.empty((len(rows), len(indices)))
    for r, row in enumerate(rows):
        if len(row) < n_cols:
            raise ValueError(f"row {r} has {len(row)} cells, expected {n_cols}")
        for c, idx in enumerate(indices):
            cell = row[idx].strip()
            if not numeric(cell):
                raise ValueError(f"non-numeric cell {cell!r} at row {r}, column {names[c]!r}")
            data[r, c] = float(cell)
    times = data[:, 0]
    if np.any(np.diff(times) <= 0):
        raise ValueError("time column must be strictly increasing")
    return times, data[:, 1:], tuple(names[1:])


def infer_from_csv(
    checkpoint,
    csv_path,
    columns=None,
    n_points: int = 100,
    train_span: float = 10.0,
    decode_mode: str = "greedy",
    beam_size: int = 4,
    max_decode_len: int | None = None,
) -> CsvInference:
    """Recover a symbolic system from a CSV time series.

    ``checkpoint`` is a checkpoint path, a loaded Checkpoint, or a
    ``(model, vocab)`` pair.  Raises on malformed input; model-side failures
    (undecodable output) are reported as flags, not exceptions.
    """
    from ..model.decoding import decode
    from .evaluation import _resolve_checkpoint

    model, vocab = _resolve_checkpoint(checkpoint)
    times, states, names = read_time_series(csv_path, columns)
    d = states.shape[1]
    if d > vocab.d_max:
        raise ValueError(f"{d} value columns exceed the model's d_max of {vocab.d_max}")

    grid = np.linspace(times[0], times[-1], n_points)
    resampled = np.stack([np.interp(grid, times, states[:, k]) for k in range(d)], axis=1)

    mean = resampled.mean(axis=0)
    std = resampled.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    time_scale = (times[-1] - times[0]) / train_span
    z = (resampled - mean) / std
    tau = (grid - times[0]) / time_scale

    normalization = {
        "mean": mean.tolist(),
        "std": std.tolist(),
        "time_scale": float(time_scale),
        "time_origin": float(times[0]),
    }

    failures: list[str] = []
    encoding = vocab.encode_trajectory(tau, z)
    result = decode(model, encoding, vocab, mode=decode_mode, beam_size=beam_size, max_len=max_decode_len)
    if result.truncated:
        failures.append("truncated")
    try:
        normalized = vocab.decode_system(result.sequence)
    except DecodingError:
        return CsvInference(None, None, R2_FAILURE, normalization, ("undecodable", *failures), names)
    if normalized.dimension != d:
        return CsvInference(
            None, normalized, R2_FAILURE, normalization, ("dimension-mismatch", *failures), names
        )

    replacements = {
        k: mul(const(1.0 / std[k]), sub(var(k), const(float(mean[k])))) for k in range(d)
    }
    equations = tuple(
        mul(const(float(std[i] / time_scale)), substitute(eq, replacements))
        for i, eq in enumerate(normalized.equations)
    )
    system = OdeSystem(equations)

    reference = Trajectory(times=grid, states=resampled)
    sol = solve_ivp(system, resampled[0], grid, IvpConfig(budget=5.0))
    r2 = r_squared(reference, sol) if isinstance(sol, Trajectory) else R2_FAILURE
    if r2 == R2_FAILURE:
        failures.append("reconstruction-integration")
    return CsvInference(system, normalized, r2, normalization, tuple(failures), names)
