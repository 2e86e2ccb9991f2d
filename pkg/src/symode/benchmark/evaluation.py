"""Evaluation protocols over a benchmark: reconstruction and generalization
R^2 across noise levels, plus the divergence-difference score.

``run_suite`` walks the full cross product of entries and noise levels.
Per entry the clean truth trajectories are integrated once; per level the
model input is the noise-corrupted reconstruction trajectory (level noise
seeds derive from the master seed), the predicted system is decoded, and
scoring is a pure function of (truth, prediction, region), which makes the
report deterministic and lets scoring fan out over worker processes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..datasets import apply_noise
from ..expressions import OdeSystem, parse_expression, parse_prefix
from ..integrate import IvpConfig, Trajectory, solve_ivp
from ..metrics import (
    DegenerateRegionError,
    R2_FAILURE,
    Region,
    div_diff,
    p_r2_above,
    r_squared,
    region_from_trajectory,
)
from ..tokenization import DecodingError
from .entries import BenchmarkEntry, BenchmarkError

__all__ = [
    "EvalRecord",
    "EvalReport",
    "evaluate_reconstruction",
    "evaluate_generalization",
    "evaluate_divergence",
    "run_suite",
]

REPORT_VERSION = 1

# benchmark truth systems are not budget-limited; predictions are
_TRUTH_IVP = IvpConfig(budget=None)
_PRED_IVP = IvpConfig(budget=5.0)


@dataclass(frozen=True)
class EvalRecord:
    entry_id: str
    noise: float
    truth_equations: tuple[str, ...]
    predicted_equations: tuple[str, ...] | None
    region: dict | None
    r2_reconstruction: float
    r2_generalization: float | None  # None when the entry has no second IC
    div_diff: float | None
    failures: tuple[str, ...]


@dataclass
class EvalReport:
    seed: int
    noise_levels: tuple[float, ...]
    records: list[EvalRecord]
    aggregates: dict
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        payload = {
            "version": self.version,
            "seed": self.seed,
            "noise_levels": list(self.noise_levels),
            "records": [],
            "aggregates": self.aggregates,
        }
        for r in self.records:
            raw = asdict(r)
            raw["r2_reconstruction"] = _json_float(r.r2_reconstruction)
            raw["r2_generalization"] = _json_float(r.r2_generalization)
            payload["records"].append(raw)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        if payload.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {payload.get('version')!r}")
        records = []
        for raw in payload["records"]:
            records.append(
                EvalRecord(
                    entry_id=raw["entry_id"],
                    noise=float(raw["noise"]),
                    truth_equations=tuple(raw["truth_equations"]),
                    predicted_equations=(
                        tuple(raw["predicted_equations"])
                        if raw["predicted_equations"] is not None
                        else None
                    ),
                    region=raw["region"],
                    r2_reconstruction=_parse_float(raw["r2_reconstruction"]),
                    r2_generalization=_parse_float(raw["r2_generalization"]),
                    div_diff=raw["div_diff"],
                    failures=tuple(raw["failures"]),
                )
            )
        report = cls(
            seed=int(payload["seed"]),
            noise_levels=tuple(float(n) for n in payload["noise_levels"]),
            records=records,
            aggregates=payload["aggregates"],
        )
        recomputed = compute_aggregates(records, report.noise_levels)
        if recomputed != report.aggregates:
            raise ValueError("report aggregates do not match its records")
        return report

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _json_float(value):
    if value is None:
        return None
    if math.isinf(value) or math.isnan(value):
        return repr(value)  # JSON-safe sentinel string, e.g. "-inf"
    return value


def _parse_float(value):
    if value is None:
        return None
    return float(value)


def _noise_key(noise: float) -> str:
    return format(noise, "g")


# --------------------------------------------------------------------------
# Single protocols (public operations)
# --------------------------------------------------------------------------


def _integrate_truth(entry: BenchmarkEntry, ic) -> Trajectory:
    sol = solve_ivp(entry.system, ic, entry.grid, _TRUTH_IVP)
    if not isinstance(sol, Trajectory):
        raise BenchmarkError(
            f"entry {entry.id!r}: ground-truth integration failed ({sol.reason})"
        )
    return sol


def _prediction_r2(predicted: OdeSystem | None, truth_traj: Trajectory, ic) -> float:
    if predicted is None or predicted.dimension != truth_traj.dimension:
        return R2_FAILURE
    sol = solve_ivp(predicted, ic, truth_traj.times, _PRED_IVP)
    if not isinstance(sol, Trajectory):
        return R2_FAILURE
    return r_squared(truth_traj, sol)


def evaluate_reconstruction(predicted: OdeSystem | None, entry: BenchmarkEntry, sigma: float = 0.0) -> float:
    """R^2 of the prediction integrated from the entry's first initial
    condition against the clean truth trajectory.

    ``sigma`` documents the noise level applied to the model's input
    upstream; scoring itself always compares against the clean truth.
    """
    del sigma
    truth = _integrate_truth(entry, entry.initial_conditions[0])
    return _prediction_r2(predicted, truth, entry.initial_conditions[0])


def evaluate_generalization(predicted: OdeSystem | None, entry: BenchmarkEntry, sigma: float = 0.0):
    """As reconstruction but from the held-back second initial condition;
    ``None`` (skip) when the entry ships only one condition."""
    del sigma
    if not entry.has_generalization_ic:
        return None
    truth = _integrate_truth(entry, entry.initial_conditions[1])
    return _prediction_r2(predicted, truth, entry.initial_conditions[1])


def evaluate_divergence(predicted: OdeSystem, entry: BenchmarkEntry) -> float:
    """DIV-diff on the region spanned by the truth reconstruction trajectory."""
    truth_traj = _integrate_truth(entry, entry.initial_conditions[0])
    region = region_from_trajectory(truth_traj, padding=0.1)
    return div_diff(entry.system, predicted, region)


# --------------------------------------------------------------------------
# Full suite
# --------------------------------------------------------------------------


def _region_dict(region: Region) -> dict:
    return {
        "lower": list(region.lower),
        "upper": list(region.upper),
        "resolution": list(region.resolution),
    }


def region_from_dict(raw: dict) -> Region:
    return Region(
        lower=tuple(raw["lower"]),
        upper=tuple(raw["upper"]),
        resolution=tuple(raw["resolution"]),
    )


def _score_task(payload: dict) -> dict:
    """Pure scoring of one (entry, noise) pair; runs in worker processes."""
    truth = OdeSystem(tuple(parse_prefix(e) for e in payload["truth_equations"]))
    failures = list(payload["failures"])
    predicted = None
    if payload["predicted_equations"] is not None:
        predicted = OdeSystem(tuple(parse_prefix(e) for e in payload["predicted_equations"]))
        if predicted.dimension != truth.dimension:
            failures.append("dimension-mismatch")
            predicted = None

    grid = np.asarray(payload["grid"])
    truth_rec = Trajectory(times=grid, states=np.asarray(payload["truth_rec_states"]))
    r2_rec = _prediction_r2(predicted, truth_rec, payload["ic_rec"])
    if predicted is not None and r2_rec == R2_FAILURE and np.isfinite(
        np.asarray(payload["truth_rec_states"])
    ).all():
        failures.append("prediction-integration")

    if payload["truth_gen_states"] is None:
        r2_gen = None
        failures.append("generalization-skipped")
    else:
        truth_gen = Trajectory(times=grid, states=np.asarray(payload["truth_gen_states"]))
        r2_gen = _prediction_r2(predicted, truth_gen, payload["ic_gen"])

    dd = None
    if predicted is not None:
        try:
            dd = div_diff(truth, predicted, region_from_dict(payload["region"]))
        except DegenerateRegionError:
            failures.append("degenerate-region")
    return {
        "r2_reconstruction": r2_rec,
        "r2_generalization": r2_gen,
        "div_diff": dd,
        "failures": tuple(dict.fromkeys(failures)),
    }


def _lookup_prediction(predictions: dict, entry_id: str, noise: float):
    value = predictions.get(entry_id)
    if isinstance(value, dict):
        value = value.get(_noise_key(noise), value.get(str(noise)))
    return value


def _predict_with_model(model, vocab, traj: Trajectory, decode_mode: str, beam_size: int, max_len):
    from ..model.decoding import decode

    failures = []
    try:
        encoding = vocab.encode_trajectory(traj.times, traj.states)
    except Exception as err:
        return None, [f"encoding: {err}"]
    result = decode(model, encoding, vocab, mode=decode_mode, beam_size=beam_size, max_len=max_len)
    if result.truncated:
        failures.append("truncated")
    try:
        system = vocab.decode_system(result.sequence)
    except DecodingError:
        failures.append("undecodable")
        return None, failures
    return system, failures


def compute_aggregates(records: list[EvalRecord], noise_levels) -> dict:
    agg = {
        "entries": len({r.entry_id for r in records}),
        "p_r2_reconstruction": {},
        "p_r2_generalization": {},
        "generalization_scored": {},
        "mean_div_diff": {},
        "div_diff_scored": {},
    }
    for noise in noise_levels:
        key = _noise_key(noise)
        level = [r for r in records if r.noise == noise]
        if not level:
            continue
        agg["p_r2_reconstruction"][key] = p_r2_above([r.r2_reconstruction for r in level])
        gen = [r.r2_generalization for r in level if r.r2_generalization is not None]
        agg["generalization_scored"][key] = len(gen)
        agg["p_r2_generalization"][key] = p_r2_above(gen) if gen else None
        divs = [r.div_diff for r in level if r.div_diff is not None]
        agg["div_diff_scored"][key] = len(divs)
        agg["mean_div_diff"][key] = float(np.mean(divs)) if divs else None
    return agg


def run_suite(
    benchmark: list[BenchmarkEntry],
    noise_levels=(0.0, 0.01, 0.02, 0.03, 0.04, 0.05),
    seed: int = 0,
    checkpoint=None,
    predictions: dict | None = None,
    workers: int = 1,
    decode_mode: str = "greedy",
    beam_size: int = 4,
    max_decode_len: int | None = None,
) -> EvalReport:
    """Evaluate a model checkpoint or a predictions mapping over a benchmark.

    ``predictions`` maps entry id to a list of equation strings (prefix or
    infix), or to ``{noise: [equations]}`` for per-level predictions.
    Exactly one of ``checkpoint`` / ``predictions`` must be given.
    """
    if (checkpoint is None) == (predictions is None):
        raise ValueError("provide exactly one of checkpoint or predictions")
    noise_levels = tuple(float(n) for n in noise_levels)

    model = vocab = None
    if checkpoint is not None:
        model, vocab = _resolve_checkpoint(checkpoint)

    tasks = []
    meta = []
    for entry_index, entry in enumerate(benchmark):
        truth_rec = _integrate_truth(entry, entry.initial_conditions[0])
        truth_gen = (
            _integrate_truth(entry, entry.initial_conditions[1])
            if entry.has_generalization_ic
            else None
        )
        region = region_from_trajectory(truth_rec, padding=0.1)
        for level_index, noise in enumerate(noise_levels):
            failures: list[str] = []
            predicted_system = None
            if predictions is not None:
                value = _lookup_prediction(predictions, entry.id, noise)
                if value is None:
                    failures.append("missing-prediction")
                else:
                    try:
                        predicted_system = OdeSystem(
                            tuple(parse_expression(text) for text in value)
                        )
                    except Exception as err:
                        failures.append(f"unparseable-prediction: {err}")
            else:
                noise_seed = np.random.SeedSequence(seed, spawn_key=(level_index, entry_index))
                noisy = apply_noise(truth_rec, noise, noise_seed)
                predicted_system, failures = _predict_with_model(
                    model, vocab, noisy, decode_mode, beam_size, max_decode_len
                )
            tasks.append(
                {
                    "truth_equations": entry.equations,
                    "predicted_equations": (
                        tuple(to_prefix_text_system(predicted_system))
                        if predicted_system is not None
                        else None
                    ),
                    "failures": failures,
                    "grid": entry.grid.tolist(),
                    "ic_rec": list(entry.initial_conditions[0]),
                    "ic_gen": (
                        list(entry.initial_conditions[1])
                        if entry.has_generalization_ic
                        else None
                    ),
                    "truth_rec_states": truth_rec.states.tolist(),
                    "truth_gen_states": truth_gen.states.tolist() if truth_gen is not None else None,
                    "region": _region_dict(region),
                }
            )
            meta.append((entry.id, noise))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(_score_task, tasks, chunksize=1))
    else:
        scored = [_score_task(t) for t in tasks]

    records = []
    for (entry_id, noise), task, result in zip(meta, tasks, scored):
        records.append(
            EvalRecord(
                entry_id=entry_id,
                noise=noise,
                truth_equations=tuple(task["truth_equations"]),
                predicted_equations=(
                    tuple(task["predicted_equations"])
                    if task["predicted_equations"] is not None
                    else None
                ),
                region=task["region"],
                r2_reconstruction=result["r2_reconstruction"],
                r2_generalization=result["r2_generalization"],
                div_diff=result["div_diff"],
                failures=result["failures"],
            )
        )
    aggregates = compute_aggregates(records, noise_levels)
    return EvalReport(seed=seed, noise_levels=noise_levels, records=records, aggregates=aggregates)


def to_prefix_text_system(system: OdeSystem) -> list[str]:
    from ..expressions import to_prefix_text

    return [to_prefix_text(eq) for eq in system.equations]


def _resolve_checkpoint(checkpoint):
    import torch

    from ..model.checkpoint import Checkpoint, load_checkpoint

    # single-threaded inference keeps results identical across worker layouts
    torch.set_num_threads(1)
    if isinstance(checkpoint, Checkpoint):
        return checkpoint.model, checkpoint.vocab
    if isinstance(checkpoint, tuple):
        return checkpoint
    ckpt = load_checkpoint(checkpoint)
    return ckpt.model, ckpt.vocab
