"""Report emission: machine-readable JSON, noise-level tables, divergence CSVs."""

from __future__ import annotations

import os

from ..expressions import OdeSystem, parse_prefix
from ..metrics import divergence_field
from .evaluation import EvalReport, _noise_key, region_from_dict

__all__ = ["emit_report", "emit_combined", "render_tables"]


def render_tables(named_reports: list[tuple[str, EvalReport]]) -> str:
    """Plain-text tables: one row per method, one column per noise level."""
    noise_levels = named_reports[0][1].noise_levels
    keys = [_noise_key(n) for n in noise_levels]
    name_width = max(12, *(len(name) for name, _ in named_reports))

    def block(title: str, field: str) -> list[str]:
        lines = [title, "-" * len(title)]
        header = "method".ljust(name_width) + "".join(f"  noise={k}".rjust(12) for k in keys)
        lines.append(header)
        for name, report in named_reports:
            cells = []
            for k in keys:
                value = report.aggregates[field].get(k)
                cells.append(("-" if value is None else f"{value:.3f}").rjust(12))
            lines.append(name.ljust(name_width) + "  " + "  ".join(c.strip().rjust(10) for c in cells))
        lines.append("")
        return lines

    out = []
    out += block("Reconstruction P(R^2 > 0.9)", "p_r2_reconstruction")
    out += block("Generalization P(R^2 > 0.9)", "p_r2_generalization")
    out += block("DIV-diff (mean RLMSE, lower is better)", "mean_div_diff")
    return "\n".join(out)


def _write_fields(report: EvalReport, out_dir: str) -> None:
    fields_dir = os.path.join(out_dir, "divfields")
    os.makedirs(fields_dir, exist_ok=True)
    seen = set()
    for record in report.records:
        if record.entry_id in seen or record.region is None:
            continue
        region = region_from_dict(record.region)
        truth = OdeSystem(tuple(parse_prefix(e) for e in record.truth_equations))
        divergence_field(truth, region).to_csv(
            os.path.join(fields_dir, f"{record.entry_id}_truth.csv")
        )
        predicted = _first_prediction(report, record.entry_id)
        if predicted is not None:
            divergence_field(predicted, region).to_csv(
                os.path.join(fields_dir, f"{record.entry_id}_predicted.csv")
            )
        seen.add(record.entry_id)


def _first_prediction(report: EvalReport, entry_id: str) -> OdeSystem | None:
    for record in report.records:
        if record.entry_id == entry_id and record.predicted_equations is not None:
            return OdeSystem(tuple(parse_prefix(e) for e in record.predicted_equations))
    return None


def emit_report(report: EvalReport, out_dir, name: str = "model") -> None:
    """Write report.json, tables.txt and per-entry divergence-field CSVs."""
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "tables.txt"), "w") as fh:
        fh.write(render_tables([(name, report)]))
    _write_fields(report, out_dir)


def emit_combined(named_reports: list[tuple[str, EvalReport]], out_dir) -> None:
    """Multi-method emission: shared tables.txt plus one subdirectory per method."""
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "tables.txt"), "w") as fh:
        fh.write(render_tables(named_reports))
    for name, report in named_reports:
        emit_report(report, os.path.join(out_dir, name), name=name)
