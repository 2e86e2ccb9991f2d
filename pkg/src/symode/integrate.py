"""Adaptive Dormand-Prince 5(4) initial-value solver with dense output.

Solves autonomous systems ``dx/dt = f(x)`` on a caller-supplied output grid.
Step-size control follows the reference DOPRI5 scheme (safety 0.9,
step-factor clamp [0.2, 10], Lund-stabilized error exponent, RMS error norm
against ``atol + rtol*|x|``); grid values come from the pair's 4th-order
dense-output interpolant, so the output cost is independent of the step
sequence.

Failures are values, not exceptions: :class:`IvpFailure` carries a reason
(``step-underflow | non-finite | budget-exceeded | max-steps``).  The
wall-clock budget is checked between steps, so enforcement lags by at most
one step duration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .expressions import Expression, OdeSystem
from .validation import check_times_states

__all__ = ["Trajectory", "IvpConfig", "IvpFailure", "solve_ivp", "compile_rhs"]


@dataclass(frozen=True)
class Trajectory:
    """Strictly increasing time stamps paired with finite states ``(N, d)``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times, states = check_times_states(self.times, self.states)
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n_points(self) -> int:
        return int(self.times.size)

    @property
    def dimension(self) -> int:
        return int(self.states.shape[1])


@dataclass(frozen=True)
class IvpConfig:
    rtol: float = 1e-3
    atol: float = 1e-6
    max_steps: int = 100_000
    budget: float | None = 1.0  # wall-clock seconds; None disables

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class IvpFailure:
    reason: str  # step-underflow | non-finite | budget-exceeded | max-steps
    message: str
    t_reached: float
    n_steps: int


# Dormand-Prince 5(4) tableau (Hairer, Norsett & Wanner, Solving ODEs I).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
# 5th-order weights minus embedded 4th-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# dense-output coefficients (Hairer's CONTD5)
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# Lund stabilization exponent (Hairer's DOPRI5 default); damps step-size
# oscillation and keeps the default-tolerance global error tighter.
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


def _codegen(expr: Expression) -> str:
    if expr.op == "const":
        return repr(expr.value)
    if expr.op == "var":
        return f"x[{expr.index}]"
    a = _codegen(expr.args[0])
    if expr.op in ("add", "sub", "mul", "div"):
        b = _codegen(expr.args[1])
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[expr.op]
        return f"({a} {sym} {b})"
    if expr.op == "neg":
        return f"(-{a})"
    if expr.op == "inv":
        return f"np.divide(1.0, {a})"
    if expr.op == "pow2":
        return f"np.square({a})"
    if expr.op == "pow3":
        return f"({a} * {a} * {a})"
    return f"np.{expr.op}({a})"


def compile_rhs(system: OdeSystem):
    """Compile a system to a fast ``f(x) -> ndarray`` with IEEE semantics.

    ``x`` must be a float64 ndarray so that division by zero and domain
    errors produce inf/NaN instead of raising.
    """
    body = ", ".join(_codegen(eq) for eq in system.equations)
    code = f"def _rhs(x, np=np, _arr=_arr):\n    return _arr([{body}])\n"
    namespace = {"np": np, "_arr": lambda vals: np.array(vals, dtype=np.float64)}
    exec(code, namespace)  # noqa: S102 - source is generated from our own tree
    return namespace["_rhs"]


def _initial_step(f, t0, x0, f0, t_end, rtol, atol):
    scale = atol + rtol * np.abs(x0)
    d0 = float(np.sqrt(np.mean((x0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    if d0 < 1e-5 or d1 < 1e-5 or not np.isfinite(d0) or not np.isfinite(d1):
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = max(min(h0, t_end - t0), 1e-13)
    f1 = f(x0 + h0 * f0)
    if np.all(np.isfinite(f1)):
        d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    else:
        d2 = np.inf
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    elif not np.isfinite(d2):
        h1 = h0 * 1e-3
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return max(min(100 * h0, h1, t_end - t0), 1e-13)


def solve_ivp(system, x0, grid, config: IvpConfig = IvpConfig()):
    """Integrate from ``grid[0]`` and report states on every grid point.

    ``system`` is an :class:`OdeSystem` or a callable ``f(x) -> array``.
    Returns a :class:`Trajectory` on success, else an :class:`IvpFailure`.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be 1-D, strictly increasing, with >= 2 points")
    x0 = np.asarray(x0, dtype=np.float64)
    if isinstance(system, OdeSystem):
        if x0.shape != (system.dimension,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({system.dimension},)")
        f = compile_rhs(system)
    else:
        f = system

    t_start = time.monotonic()
    t, t_end = float(grid[0]), float(grid[-1])
    y = x0.copy()
    out = np.empty((grid.size, y.size), dtype=np.float64)
    out[0] = y
    next_out = 1
    n_steps = 0
    err_old = 1e-4

    with np.errstate(all="ignore"):
        k = np.empty((7, y.size), dtype=np.float64)
        k[0] = f(y)
        if not np.all(np.isfinite(k[0])):
            return IvpFailure("non-finite", "right-hand side non-finite at x0", t, 0)
        h = _initial_step(f, t, y, k[0], t_end, config.rtol, config.atol)

        while next_out < grid.size:
            if config.budget is not None and time.monotonic() - t_start > config.budget:
                return IvpFailure(
                    "budget-exceeded", f"wall clock exceeded {config.budget} s", t, n_steps
                )
            if n_steps >= config.max_steps:
                return IvpFailure("max-steps", f"exceeded {config.max_steps} steps", t, n_steps)
            h = min(h, t_end - t)
            if h < 1e-14 * max(1.0, abs(t)):
                return IvpFailure("step-underflow", f"step size {h:.3e} underflowed", t, n_steps)

            for i in range(1, 7):
                k[i] = f(y + h * (_A[i] @ k[:i]))
            y_new = y + h * (_A[6] @ k[:6])  # row 7 equals the 5th-order weights
            n_steps += 1

            if not np.all(np.isfinite(y_new)) or not np.all(np.isfinite(k)):
                # one retry at a smaller step; persistent non-finite fails
                if h > 1e-12 * max(1.0, abs(t)):
                    h *= 0.25
                    continue
                return IvpFailure("non-finite", "state or stage became non-finite", t, n_steps)

            scale = config.atol + config.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean(((h * (_E @ k)) / scale) ** 2)))
            fac11 = err**_ALPHA if err > 0.0 else 0.0

            if err <= 1.0:
                # dense output over (t, t + h]
                ydiff = y_new - y
                bspl = h * k[0] - ydiff
                cont4 = ydiff - h * k[6] - bspl
                cont5 = h * (_D @ k)
                t_new = t + h
                while next_out < grid.size and grid[next_out] <= t_new + 1e-12 * max(1.0, abs(t_new)):
                    theta = min(1.0, (grid[next_out] - t) / h)
                    om = 1.0 - theta
                    out[next_out] = y + theta * (ydiff + om * (bspl + theta * (cont4 + om * cont5)))
                    next_out += 1
                t, y = t_new, y_new
                k[0] = k[6]  # FSAL
                fac = fac11 / err_old**_BETA
                h /= max(1.0 / _MAX_FACTOR, min(1.0 / _MIN_FACTOR, fac / _SAFETY))
                err_old = max(err, 1e-4)
            else:
                h /= min(1.0 / _MIN_FACTOR, fac11 / _SAFETY)

    if not np.all(np.isfinite(out)):
        return IvpFailure("non-finite", "interpolated output non-finite", t, n_steps)
    return Trajectory(times=grid.copy(), states=out)
