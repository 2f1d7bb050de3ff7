"""Structure-mapping analogies over symbolic DAGs.

Modules: ``ir`` (graphs, parsing, serialization), ``smt`` (constraints,
scores, candidate inferences), ``matcher`` (exact and greedy solvers),
``synth`` (synthetic problems), ``encoding`` (label and signature graphs),
``autodiff`` (tensors and Adam), ``amn`` (the matching network),
``evaluate`` (structural metrics), ``experiments`` (cached desk-scale runs)
and ``cli``.
"""

from .amn import AMN, AmnConfig, Trainer, sem_select
from .evaluate import EvalReport
from .ir import ExprNode, GraphBuilder, Mapping, NodeKind, RelGraph, parse_sexpr, to_sexpr
from .matcher import solve, solve_exact, solve_greedy
from .smt import candidate_inferences, check_mapping, structural_score
from .synth import GenParams, TrainingExample, desk_params, generate

__version__ = "0.1.0"

__all__ = [
    "AMN", "AmnConfig", "EvalReport", "ExprNode", "GenParams", "GraphBuilder", "Mapping", "NodeKind",
    "RelGraph", "Trainer", "TrainingExample", "candidate_inferences", "check_mapping", "desk_params",
    "generate", "parse_sexpr", "sem_select", "solve", "solve_exact", "solve_greedy",
    "structural_score", "to_sexpr",
]
