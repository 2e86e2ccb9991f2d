"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = ["check_random_state", "check_times_states", "check_point"]


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Accepts ``None`` (fresh entropy), an int, a ``SeedSequence`` or an
    existing ``Generator`` (returned as-is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.Generator(np.random.PCG64(seed))
    raise TypeError(f"cannot use {seed!r} to seed a Generator")


def check_times_states(times, states, require_finite: bool = True):
    """Validate and coerce a (times, states) pair to float64 arrays.

    ``times`` must be strictly increasing with at least 2 entries; ``states``
    is coerced to shape ``(len(times), d)``.
    """
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise ValueError(f"times must be 1-D with >= 2 entries, got shape {times.shape}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if not np.all(np.isfinite(times)):
        raise ValueError("times contain non-finite values")
    if states.ndim == 1:
        states = states[:, None]
    if states.ndim != 2 or states.shape[0] != times.size:
        raise ValueError(
            f"states must have shape (len(times), d), got {states.shape} for "
            f"{times.size} times"
        )
    if require_finite and not np.all(np.isfinite(states)):
        raise ValueError("states contain non-finite values")
    return times, states


def check_point(point, dimension: int) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    if point.size != dimension:
        raise ValueError(f"point has length {point.size}, expected {dimension}")
    return point
