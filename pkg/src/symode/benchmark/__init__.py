from .csv_inference import CsvInference, infer_from_csv, read_time_series
from .entries import BenchmarkEntry, BenchmarkError, bundled_benchmark, load_benchmark
from .evaluation import (
    EvalRecord,
    EvalReport,
    evaluate_divergence,
    evaluate_generalization,
    evaluate_reconstruction,
    run_suite,
)
from .reporting import emit_combined, emit_report, render_tables

__all__ = [
    "BenchmarkEntry",
    "BenchmarkError",
    "CsvInference",
    "EvalRecord",
    "EvalReport",
    "bundled_benchmark",
    "emit_combined",
    "emit_report",
    "evaluate_divergence",
    "evaluate_generalization",
    "evaluate_reconstruction",
    "infer_from_csv",
    "load_benchmark",
    "read_time_series",
    "render_tables",
    "run_suite",
]
