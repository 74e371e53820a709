"""Decide whether a propositional knowledge base can supervise a perception
model (rank criterion), and test that decision by training on synthetic data."""

__version__ = "0.1.0"

from .kb import (  # noqa: E402
    KBError,
    KnowledgeBase,
    builtin_kb,
    ground,
    kb_to_json,
    parse_kb,
    random_kb,
    render_kb,
)
from .probmatrix import (  # noqa: E402
    ClassPrior,
    DiagnosisReport,
    ProbMatrix,
    bound_constants,
    concept_prior,
    diagnose,
    joint_matrix,
    location_matrix_uniform,
    rank_exact,
    rank_numeric,
    sequence_prior,
)

__all__ = [
    "ClassPrior",
    "DiagnosisReport",
    "KBError",
    "KnowledgeBase",
    "ProbMatrix",
    "bound_constants",
    "builtin_kb",
    "concept_prior",
    "diagnose",
    "ground",
    "joint_matrix",
    "kb_to_json",
    "location_matrix_uniform",
    "parse_kb",
    "random_kb",
    "rank_exact",
    "rank_numeric",
    "render_kb",
    "sequence_prior",
]
