"""Lagrange-decomposition dual solver for 0-1 ILPs with learned update steps."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Constraint,
    Decomposition,
    ExactSolution,
    IlpInstance,
    InfeasibleError,
    ParseError,
    decompose,
    enumerate_optimum,
    generate_independent_set,
    load_instance,
    parse_lp,
    tiny_instance,
    to_json,
    to_lp,
)
