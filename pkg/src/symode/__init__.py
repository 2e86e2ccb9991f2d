"""symode: symbolic recovery of ODE systems from trajectories.

Synthesizes corpora of random ODE systems, trains a dual-decoder sequence
model that emits both the symbolic system and its derivative sequence, and
evaluates predictions with trajectory R^2 and a divergence-difference score
over state-space grids.
"""

from .datasets import (
    DatasetSample,
    Discard,
    GenConfig,
    apply_noise,
    build_sample,
    compute_derivatives,
    generate_dataset,
    read_dataset,
    sample_system,
)
from .estimator import SymbolicODERegressor
from .expressions import (
    Expression,
    OdeSystem,
    evaluate,
    eval_system,
    parse_expression,
    parse_infix,
    parse_prefix,
    partial_derivative,
    to_infix,
    to_prefix,
    from_prefix,
    to_prefix_text,
)
from .integrate import IvpConfig, IvpFailure, Trajectory, solve_ivp
from .metrics import (
    DivergenceField,
    Region,
    div_diff,
    divergence_at,
    divergence_field,
    p_r2_above,
    r_squared,
    region_from_trajectory,
)
from .tokenization import TokenSequence, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "DatasetSample",
    "Discard",
    "DivergenceField",
    "Expression",
    "GenConfig",
    "IvpConfig",
    "IvpFailure",
    "OdeSystem",
    "Region",
    "SymbolicODERegressor",
    "TokenSequence",
    "Trajectory",
    "Vocabulary",
    "apply_noise",
    "build_sample",
    "compute_derivatives",
    "div_diff",
    "divergence_at",
    "divergence_field",
    "eval_system",
    "evaluate",
    "from_prefix",
    "generate_dataset",
    "p_r2_above",
    "parse_expression",
    "parse_infix",
    "parse_prefix",
    "partial_derivative",
    "r_squared",
    "read_dataset",
    "region_from_trajectory",
    "sample_system",
    "solve_ivp",
    "to_infix",
    "to_prefix",
    "to_prefix_text",
]
