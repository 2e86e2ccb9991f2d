"""Benchmark file schema, validation, and the bundled mini benchmark."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..expressions import OdeSystem, ParseError, free_variables, parse_prefix
from ..tokenization import Vocabulary

__all__ = ["BenchmarkEntry", "BenchmarkError", "load_benchmark", "bundled_benchmark"]

BENCHMARK_VERSION = 1


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkEntry:
    id: str
    description: str
    dimension: int
    equations: tuple[str, ...]  # prefix text per equation
    initial_conditions: tuple[tuple[float, ...], ...]
    t_end: float
    n_points: int

    @property
    def system(self) -> OdeSystem:
        return OdeSystem(tuple(parse_prefix(e) for e in self.equations))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_points)

    @property
    def has_generalization_ic(self) -> bool:
        return len(self.initial_conditions) >= 2


def _entry_from_dict(raw: dict, index: int) -> BenchmarkEntry:
    entry_id = raw.get("id", f"<entry {index}>")

    def need(field):
        if field not in raw:
            raise BenchmarkError(f"entry {entry_id!r}: missing field {field!r}")
        return raw[field]

    equations = tuple(str(e) for e in need("equations"))
    dimension = int(need("dimension"))
    if len(equations) != dimension:
        raise BenchmarkError(
            f"entry {entry_id!r}: field 'equations' has {len(equations)} items for dimension {dimension}"
        )
    try:
        parsed = [parse_prefix(e) for e in equations]
    except ParseError as err:
        raise BenchmarkError(f"entry {entry_id!r}: field 'equations': {err}") from None
    for i, expr in enumerate(parsed):
        bad = [k for k in free_variables(expr) if k >= dimension]
        if bad:
            raise BenchmarkError(
                f"entry {entry_id!r}: field 'equations'[{i}] references x_{max(bad)} "
                f"at dimension {dimension}"
            )
    ics = tuple(tuple(float(v) for v in ic) for ic in need("initial_conditions"))
    if not ics:
        raise BenchmarkError(f"entry {entry_id!r}: field 'initial_conditions' is empty")
    for ic in ics:
        if len(ic) != dimension:
            raise BenchmarkError(
                f"entry {entry_id!r}: field 'initial_conditions' has a length-{len(ic)} "
                f"condition for dimension {dimension}"
            )
    t_end = float(need("t_end"))
    n_points = int(need("n_points"))
    if t_end <= 0 or n_points < 2:
        raise BenchmarkError(f"entry {entry_id!r}: need t_end > 0 and n_points >= 2")
    return BenchmarkEntry(
        id=str(entry_id),
        description=str(raw.get("description", "")),
        dimension=dimension,
        equations=equations,
        initial_conditions=ics,
        t_end=t_end,
        n_points=n_points,
    )


def _load_payload(payload: dict, vocab: Vocabulary | None) -> list[BenchmarkEntry]:
    if payload.get("version") != BENCHMARK_VERSION:
        raise BenchmarkError(
            f"unsupported benchmark schema version {payload.get('version')!r}"
        )
    raw_entries = payload.get("entries", [])
    if not raw_entries:
        raise BenchmarkError("benchmark contains no entries")
    entries = [_entry_from_dict(raw, i) for i, raw in enumerate(raw_entries)]
    seen = set()
    for entry in entries:
        if entry.id in seen:
            raise BenchmarkError(f"duplicate entry id {entry.id!r}")
        seen.add(entry.id)
        if vocab is not None:
            try:
                vocab.encode_system(entry.system)
            except Exception as err:
                raise BenchmarkError(
                    f"entry {entry.id!r}: field 'equations' does not tokenize: {err}"
                ) from None
    return entries


def load_benchmark(path, vocab: Vocabulary | None = None) -> list[BenchmarkEntry]:
    """Parse and validate a benchmark file.

    With a vocabulary, every system is additionally round-tripped through the
    tokenizer so evaluation cannot fail later on an unencodable entry.
    """
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise BenchmarkError(f"{path} is not valid JSON: {err}") from None
    return _load_payload(payload, vocab)


def bundled_benchmark(vocab: Vocabulary | None = None) -> list[BenchmarkEntry]:
    """The packaged mini benchmark (10 low-dimensional systems)."""
    text = resources.files("symode.data").joinpath("benchmark_mini.json").read_text()
    return _load_payload(json.loads(text), vocab)
