"""Random ODE sampling and end-to-end training-corpus construction.

The pipeline per attempt: sample a system (top-down tree sampling with a
binary-op budget and a depth cap, constants quantized to the active token
precision), sample an initial condition, integrate under a wall-clock
budget, evaluate the right-hand side along the trajectory for derivative
labels, draw a noise level and apply multiplicative Gaussian noise, then
serialize.  Failures become :class:`Discard` values whose reasons partition
the attempts: ``integration-error | timeout | non-finite | too-short``.

Generation is reproducible and embarrassingly parallel: attempt ``i`` is
fully determined by ``base_seed + i``, so the accepted set is identical for
any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .expressions import (
    Expression,
    OdeSystem,
    const,
    eval_system_many,
    free_variables,
    var,
)
from .integrate import IvpConfig, IvpFailure, Trajectory, solve_ivp
from .tokenization import DEFAULT_MAX_LENGTHS, ROLE_DERIVATIVE, Vocabulary
from .validation import check_random_state

__all__ = [
    "GenConfig",
    "DatasetSample",
    "Discard",
    "DiscardSignal",
    "GenerationError",
    "GenSummary",
    "vocab_for",
    "sample_system",
    "compute_derivatives",
    "apply_noise",
    "build_sample",
    "generate_dataset",
    "read_dataset",
    "read_manifest",
]

DATASET_VERSION = 1


class GenerationError(RuntimeError):
    pass


class DiscardSignal(Exception):
    """Internal signal that a sample must be discarded (reason attached)."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class GenConfig:
    """Knobs for system sampling, integration and corpus assembly."""

    d_max: int = 4
    # relative frequency of dimensions 1..d_max (ODEBench-like composition)
    dimension_weights: tuple[float, ...] = (23.0, 28.0, 10.0, 2.0)
    max_depth: int = 4
    max_binary_ops: int = 5
    binary_prob: float = 0.5
    unary_prob: float = 0.25
    binary_ops: tuple[str, ...] = ("add", "sub", "mul", "div")
    unary_ops: tuple[str, ...] = (
        "neg", "sin", "cos", "exp", "log", "sqrt", "inv", "pow2", "pow3",
    )
    variable_leaf_prob: float = 0.5
    const_low: float = 0.05
    const_high: float = 10.0
    ic_low: float = -3.0
    ic_high: float = 3.0
    ic_tries: int = 10
    t_span: float = 10.0
    n_points: int = 100
    min_points: int = 20
    integration_budget: float = 1.0
    noise_levels: tuple[float, ...] = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    noisy_targets: bool = False  # derivative labels stay clean by default
    mantissa_digits: int = 4
    exponent_range: int = 100

    def __post_init__(self):
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if len(self.dimension_weights) < self.d_max:
            raise ValueError("need a dimension weight for each d in 1..d_max")
        if not 0 <= self.unary_prob <= 1 or not 0 <= self.binary_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.const_low <= 0 or self.const_high <= self.const_low:
            raise ValueError("constant magnitude law needs 0 < low < high")
        if self.t_span <= 0 or self.n_points < 2:
            raise ValueError("need t_span > 0 and n_points >= 2")
        if any(s < 0 for s in self.noise_levels):
            raise ValueError("noise levels must be >= 0")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_span, self.n_points)


@dataclass(frozen=True)
class DatasetSample:
    system: OdeSystem
    trajectory: Trajectory  # clean
    derivatives: np.ndarray  # (N, d), computed on the clean trajectory
    noisy_trajectory: Trajectory  # what the model consumes (== trajectory at sigma 0)
    sigma: float
    seed: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Discard:
    reason: str  # integration-error | timeout | non-finite | too-short
    seed: int
    detail: str = ""


@dataclass(frozen=True)
class GenSummary:
    attempts: int
    accepted: int
    discarded: dict[str, int]


@lru_cache(maxsize=8)
def _vocab_cached(d_max: int, mantissa_digits: int, exponent_range: int) -> Vocabulary:
    return Vocabulary(d_max=d_max, mantissa_digits=mantissa_digits, exponent_range=exponent_range)


def vocab_for(config: GenConfig) -> Vocabulary:
    """The vocabulary a config's datasets are encoded with."""
    return _vocab_cached(config.d_max, config.mantissa_digits, config.exponent_range)


# --------------------------------------------------------------------------
# System sampling
# --------------------------------------------------------------------------


def _sample_leaf(rng, config: GenConfig, dimension: int, vocab: Vocabulary) -> Expression:
    if rng.random() < config.variable_leaf_prob:
        return var(int(rng.integers(dimension)))
    magnitude = float(np.exp(rng.uniform(np.log(config.const_low), np.log(config.const_high))))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    # quantize so the token target denotes exactly the system that is integrated
    return const(vocab.quantize(sign * magnitude))


def _sample_node(rng, config, dimension, vocab, depth_left, budget) -> Expression:
    if depth_left > 0:
        r = rng.random()
        if r < config.unary_prob and config.unary_ops:
            op = config.unary_ops[int(rng.integers(len(config.unary_ops)))]
            return Expression(op, (_sample_node(rng, config, dimension, vocab, depth_left - 1, budget),))
        if r < config.unary_prob + config.binary_prob and budget[0] > 0 and config.binary_ops:
            budget[0] -= 1
            op = config.binary_ops[int(rng.integers(len(config.binary_ops)))]
            a = _sample_node(rng, config, dimension, vocab, depth_left - 1, budget)
            b = _sample_node(rng, config, dimension, vocab, depth_left - 1, budget)
            return Expression(op, (a, b))
    return _sample_leaf(rng, config, dimension, vocab)


def sample_system(config: GenConfig, seed) -> OdeSystem:
    """Draw a random system: dimension by the configured law, then one
    expression tree per equation, each containing at least one variable."""
    rng = check_random_state(seed)
    vocab = vocab_for(config)
    weights = np.asarray(config.dimension_weights[: config.d_max], dtype=np.float64)
    dimension = 1 + int(rng.choice(config.d_max, p=weights / weights.sum()))
    equations = []
    for _ in range(dimension):
        for attempt in range(100):
            eq = _sample_node(rng, config, dimension, vocab, config.max_depth, [config.max_binary_ops])
            if free_variables(eq):
                break
        else:
            raise GenerationError("could not sample an equation with a variable leaf in 100 tries")
        equations.append(eq)
    return OdeSystem(tuple(equations))


# --------------------------------------------------------------------------
# Labels and noise
# --------------------------------------------------------------------------


def compute_derivatives(system: OdeSystem, traj: Trajectory) -> np.ndarray:
    """Right-hand side evaluated at every trajectory state -> ``(N, d)``.

    Raises :class:`DiscardSignal` ("non-finite") if any entry is non-finite.
    """
    if traj.dimension != system.dimension:
        raise ValueError("trajectory dimension does not match the system")
    derivs = eval_system_many(system, traj.states)
    if not np.all(np.isfinite(derivs)):
        step = int(np.argmax(~np.isfinite(derivs).all(axis=1)))
        raise DiscardSignal("non-finite", f"derivative non-finite at step {step}")
    return derivs


def apply_noise(traj: Trajectory, sigma: float, seed) -> Trajectory:
    """Multiplicative Gaussian corruption ``x * (1 + sigma * eps)``.

    ``sigma = 0`` returns the input trajectory unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return traj
    rng = check_random_state(seed)
    eps = rng.standard_normal(traj.states.shape)
    return Trajectory(times=traj.times.copy(), states=traj.states * (1.0 + sigma * eps))


# --------------------------------------------------------------------------
# Sample assembly
# --------------------------------------------------------------------------

_FAILURE_REASON = {
    "budget-exceeded": "timeout",
    "non-finite": "non-finite",
    "step-underflow": "integration-error",
    "max-steps": "integration-error",
}


def _check_encodable(vocab: Vocabulary, sample: DatasetSample) -> None:
    traj = sample.noisy_trajectory
    vocab.encode_trajectory(traj.times, traj.states)
    vocab.encode_derivative_sequence(sample.derivatives)
    vocab.encode_system(sample.system)


def build_sample(config: GenConfig, seed: int):
    """One generation attempt -> :class:`DatasetSample` or :class:`Discard`."""
    ss = np.random.SeedSequence(seed)
    sys_ss, ic_ss, sigma_ss, noise_ss = ss.spawn(4)
    system = sample_system(config, sys_ss)
    dimension = system.dimension
    grid = config.grid
    ivp_config = IvpConfig(budget=config.integration_budget)
    ic_rng = check_random_state(ic_ss)

    reason, detail = "integration-error", ""
    for attempt in range(config.ic_tries):
        x0 = ic_rng.uniform(config.ic_low, config.ic_high, size=dimension)
        result = solve_ivp(system, x0, grid, ivp_config)
        if isinstance(result, IvpFailure):
            reason = _FAILURE_REASON[result.reason]
            detail = result.message
            continue
        if result.n_points < config.min_points:
            reason, detail = "too-short", f"{result.n_points} < {config.min_points} points"
            continue
        try:
            derivatives = compute_derivatives(system, result)
        except DiscardSignal as signal:
            reason, detail = signal.reason, signal.detail
            continue
        sigma = float(config.noise_levels[int(check_random_state(sigma_ss).integers(len(config.noise_levels)))])
        noisy = apply_noise(result, sigma, noise_ss)
        sample = DatasetSample(
            system=system,
            trajectory=result,
            derivatives=derivatives,
            noisy_trajectory=noisy,
            sigma=sigma,
            seed=seed,
            meta={"dimension": dimension, "ic_attempts": attempt + 1},
        )
        try:
            _check_encodable(vocab_for(config), sample)
        except Exception as err:  # token-range overflow counts as non-finite data
            reason, detail = "non-finite", f"not encodable: {err}"
            continue
        return sample
    return Discard(reason=reason, seed=seed, detail=detail)


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def sample_to_record(sample: DatasetSample, vocab: Vocabulary) -> dict:
    return {
        "version": DATASET_VERSION,
        "vocab_hash": vocab.hash,
        "seed": sample.seed,
        "sigma": sample.sigma,
        "system_tokens": vocab.system_tokens(sample.system),
        "times": sample.trajectory.times.tolist(),
        "states": sample.noisy_trajectory.states.tolist(),
        "derivatives": sample.derivatives.tolist(),
    }


def _manifest_path(out_path: str) -> str:
    return f"{out_path}.manifest.json"


def _validate_lengths(config: GenConfig) -> None:
    worst = 2 + 3 * config.d_max * config.n_points + (config.n_points - 1)
    cap = DEFAULT_MAX_LENGTHS[ROLE_DERIVATIVE]
    if worst > cap:
        raise ValueError(
            f"derivative targets can reach {worst} tokens (> {cap}); "
            "lower n_points or d_max"
        )


def _gen_worker(args):
    config, seed = args
    result = build_sample(config, seed)
    if isinstance(result, Discard):
        return seed, result.reason, None
    return seed, None, json.dumps(sample_to_record(result, vocab_for(config)))


def generate_dataset(
    config: GenConfig,
    count: int,
    out_path,
    base_seed: int = 0,
    workers: int = 1,
    max_attempts: int | None = None,
) -> GenSummary:
    """Stream ``count`` accepted samples to a JSON-lines file.

    Attempt ``i`` uses seed ``base_seed + i``; attempts run in index order,
    so output bytes do not depend on ``workers``.  A sidecar manifest stores
    the config and the summary.
    """
    _validate_lengths(config)
    out_path = str(out_path)
    vocab = vocab_for(config)
    if max_attempts is None:
        max_attempts = 100 * count + 1000

    discarded: dict[str, int] = {}
    accepted = 0
    attempts = 0
    next_seed = base_seed

    def handle(results) -> bool:
        nonlocal accepted, attempts
        for seed, reason, line in results:
            attempts += 1
            if reason is not None:
                discarded[reason] = discarded.get(reason, 0) + 1
            else:
                fh.write(line + "\n")
                accepted += 1
                if accepted >= count:
                    return True
        return False

    with open(out_path, "w") as fh:
        if workers <= 1:
            while accepted < count and attempts < max_attempts:
                batch = [(config, next_seed + i) for i in range(min(64, max_attempts - attempts))]
                next_seed += len(batch)
                if handle(map(_gen_worker, batch)):
                    break
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                while accepted < count and attempts < max_attempts:
                    n = min(64 * workers, max_attempts - attempts)
                    batch = [(config, next_seed + i) for i in range(n)]
                    next_seed += n
                    if handle(pool.map(_gen_worker, batch, chunksize=8)):
                        break

    if accepted < count:
        raise GenerationError(
            f"only {accepted}/{count} samples accepted after {attempts} attempts "
            f"(discards: {discarded})"
        )
    summary = GenSummary(attempts=attempts, accepted=accepted, discarded=dict(sorted(discarded.items())))
    manifest = {
        "version": DATASET_VERSION,
        "config": asdict(config),
        "base_seed": base_seed,
        "count": count,
        "summary": {"attempts": summary.attempts, "accepted": summary.accepted, "discarded": summary.discarded},
        "vocab": {
            "d_max": config.d_max,
            "mantissa_digits": config.mantissa_digits,
            "exponent_range": config.exponent_range,
            "hash": vocab.hash,
        },
    }
    with open(_manifest_path(out_path), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return summary


def read_manifest(data_path) -> dict:
    with open(_manifest_path(str(data_path))) as fh:
        return json.load(fh)


def read_dataset(path) -> list[dict]:
    """Load all JSON-line records of a dataset file."""
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
