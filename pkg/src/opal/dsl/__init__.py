"""Restricted aggregate language: parsing, static checks and evaluation."""
from .ast import (
    AGGREGATE_FUNCTIONS,
    Aggregate,
    AlgorithmAst,
    And,
    Comparison,
    Not,
    Or,
    Param,
    ParamRef,
)
from .evaluator import (
    AggregateRow,
    AggregateTable,
    BindingError,
    EvaluationError,
    binding_matches,
    check_bindings,
    evaluate,
    round6,
)
from .parser import (
    DslError,
    DslSyntaxError,
    ProjectionError,
    SubjectReferenceError,
    TypeMismatchError,
    UnknownColumnError,
    parse,
    tokenize,
)

__all__ = [
    "AGGREGATE_FUNCTIONS",
    "Aggregate",
    "AggregateRow",
    "AggregateTable",
    "AlgorithmAst",
    "And",
    "BindingError",
    "Comparison",
    "DslError",
    "DslSyntaxError",
    "EvaluationError",
    "Not",
    "Or",
    "Param",
    "ParamRef",
    "ProjectionError",
    "SubjectReferenceError",
    "TypeMismatchError",
    "UnknownColumnError",
    "binding_matches",
    "check_bindings",
    "evaluate",
    "parse",
    "round6",
    "tokenize",
]
