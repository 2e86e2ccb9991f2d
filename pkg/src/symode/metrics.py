"""Scoring: trajectory R^2, P(R^2 > 0.9), divergence fields and DIV-diff.

The divergence of a system is the exact symbolic sum of the diagonal
partials ``sum_k d f_k / d x_k``, evaluated on a tensor grid over a
:class:`Region`.  DIV-diff between two systems is the root-log mean squared
error ``sqrt(mean(ln(1 + |div_a - div_b|)^2))`` over grid points where both
divergences are finite; fewer than half jointly-valid points is a
degenerate region and an error rather than a silently thin average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .expressions import (
    Expression,
    OdeSystem,
    add,
    const,
    evaluate,
    evaluate_many,
    partial_derivative,
)
from .integrate import Trajectory

__all__ = [
    "Region",
    "DivergenceField",
    "DegenerateRegionError",
    "r_squared",
    "p_r2_above",
    "divergence_expression",
    "divergence_at",
    "divergence_field",
    "div_diff",
    "region_from_trajectory",
]

R2_FAILURE = -math.inf
_MIN_VALID_FRACTION = 0.5
_MIN_REGION_WIDTH = 1e-3


class DegenerateRegionError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """A closed box ``[lo_k, hi_k]`` per dimension with per-dimension resolution."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]
    max_points: int = 1_000_000

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        resolution = tuple(int(g) for g in self.resolution)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)
        if not len(lower) == len(upper) == len(resolution):
            raise ValueError("lower, upper and resolution must have equal lengths")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError("each interval needs lo < hi")
        if any(g < 2 for g in resolution):
            raise ValueError("resolution must be >= 2 points per dimension")
        if self.n_points > self.max_points:
            raise ValueError(f"grid size {self.n_points} exceeds cap {self.max_points}")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.resolution))

    def grid(self) -> np.ndarray:
        """All grid points as an ``(n_points, d)`` array, row-major over axes."""
        axes = [
            np.linspace(lo, hi, g)
            for lo, hi, g in zip(self.lower, self.upper, self.resolution)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


@dataclass(frozen=True)
class DivergenceField:
    """Scalar divergence sampled on a region grid; invalid points are masked."""

    region: Region
    points: np.ndarray  # (n, d)
    values: np.ndarray  # (n,), NaN where invalid
    valid: np.ndarray  # (n,) bool

    def to_csv(self, path) -> None:
        """Plot-data export: columns x_0..x_{d-1}, div, valid."""
        d = self.region.dimension
        header = ",".join([f"x_{k}" for k in range(d)] + ["div", "valid"])
        lines = [header]
        for point, value, ok in zip(self.points, self.values, self.valid):
            cells = [repr(float(c)) for c in point]
            cells.append(repr(float(value)) if ok else "nan")
            cells.append("1" if ok else "0")
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def r_squared(truth: Trajectory, pred: Trajectory) -> float:
    """Joint R^2 over all components, SST about the truth's per-component mean.

    Returns ``-inf`` when the prediction contains non-finite values.
    """
    if truth.states.shape != pred.states.shape or not np.array_equal(
        truth.times, pred.times
    ):
        raise ValueError("trajectories must share the same time grid and dimension")
    if not np.all(np.isfinite(pred.states)):
        return R2_FAILURE
    residual = pred.states - truth.states
    sse = float(np.sum(residual**2))
    centered = truth.states - truth.states.mean(axis=0, keepdims=True)
    sst = float(np.sum(centered**2))
    if sst == 0.0:
        return 1.0 if sse == 0.0 else R2_FAILURE
    return 1.0 - sse / sst


def p_r2_above(scores, threshold: float = 0.9) -> float:
    """Fraction of scores strictly above ``threshold``; failures stay in the
    denominator."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores list is empty")
    return float(np.mean(scores > threshold))


def divergence_expression(system: OdeSystem) -> Expression:
    """Symbolic divergence ``sum_k d f_k / d x_k`` of a system."""
    parts = [
        partial_derivative(eq, k) for k, eq in enumerate(system.equations)
    ]
    nonzero = [p for p in parts if not (p.op == "const" and p.value == 0.0)]
    if not nonzero:
        return const(0.0)
    return reduce(add, nonzero)


def divergence_at(system: OdeSystem, point) -> float:
    """Divergence of the system's vector field at one point."""
    return evaluate(divergence_expression(system), np.asarray(point, dtype=np.float64))


def divergence_field(system: OdeSystem, region: Region) -> DivergenceField:
    """Divergence on the full region grid, with non-finite points masked."""
    if region.dimension != system.dimension:
        raise ValueError(
            f"region dimension {region.dimension} != system dimension {system.dimension}"
        )
    points = region.grid()
    values = evaluate_many(divergence_expression(system), points)
    valid = np.isfinite(values)
    values = np.where(valid, values, np.nan)
    return DivergenceField(region=region, points=points, values=values, valid=valid)


def div_diff(truth: OdeSystem, pred: OdeSystem, region: Region) -> float:
    """Root-log-MSE between two divergence fields over jointly valid points."""
    if truth.dimension != pred.dimension:
        raise ValueError("systems must have equal dimensions")
    field_t = divergence_field(truth, region)
    field_p = divergence_field(pred, region)
    valid = field_t.valid & field_p.valid
    fraction = float(valid.mean())
    if fraction < _MIN_VALID_FRACTION:
        raise DegenerateRegionError(
            f"only {fraction:.1%} of grid points jointly valid (need >= 50%)"
        )
    err = np.log1p(np.abs(field_t.values[valid] - field_p.values[valid]))
    return float(np.sqrt(np.mean(err**2)))


def _default_resolution(dimension: int) -> int:
    if dimension <= 2:
        return 20
    if dimension == 3:
        return 10
    return 6


def region_from_trajectory(
    traj: Trajectory, padding: float = 0.1, resolution: int | None = None
) -> Region:
    """Padded bounding box of the trajectory's states.

    Each side grows by ``padding * (hi - lo)``; a dimension thinner than
    1e-3 is widened symmetrically to that minimum.
    """
    lows = traj.states.min(axis=0)
    highs = traj.states.max(axis=0)
    span = highs - lows
    lows = lows - padding * span
    highs = highs + padding * span
    thin = (highs - lows) < _MIN_REGION_WIDTH
    center = (highs + lows) / 2.0
    lows = np.where(thin, center - _MIN_REGION_WIDTH / 2, lows)
    highs = np.where(thin, center + _MIN_REGION_WIDTH / 2, highs)
    g = _default_resolution(traj.dimension) if resolution is None else int(resolution)
    return Region(
        lower=tuple(lows), upper=tuple(highs), resolution=(g,) * traj.dimension
    )
