"""Evaluation of a checked AST over a dataset snapshot."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, localcontext

import numpy as np

from ..dataset import INT64_MAX, DatasetSnapshot, SemanticType
from .ast import AlgorithmAst, And, Comparison, Not, Or, ParamRef

QUANTUM = Decimal("0.000001")


class EvaluationError(ValueError):
    pass


class BindingError(EvaluationError):
    pass


def round6(value) -> Decimal:
    """Fixed-precision output rounding, half-even to 6 fractional digits."""
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(value).quantize(QUANTUM, rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class AggregateRow:
    key: tuple
    values: dict
    # internal only: consumed by the safe-answer policy, never serialized
    cohort_row_ids: frozenset

    @property
    def cohort_size(self) -> int:
        return len(self.cohort_row_ids)


@dataclass(frozen=True)
class AggregateTable:
    group_key_columns: tuple[str, ...]
    rows: tuple[AggregateRow, ...]

    def __post_init__(self):
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate group keys")

    def cohorts(self) -> list[frozenset]:
        return [r.cohort_row_ids for r in self.rows]


def check_bindings(ast: AlgorithmAst, bindings: dict) -> None:
    for param in ast.parameters:
        if param.name not in bindings:
            raise BindingError(f"missing binding for parameter {param.name!r}")
        if not binding_matches(param.type, bindings[param.name]):
            raise BindingError(f"binding for {param.name!r} is not of type {param.type.value}")


def binding_matches(kind: SemanticType, value) -> bool:
    if isinstance(value, bool):
        return False
    if kind is SemanticType.INTEGER:
        return isinstance(value, int)
    if kind is SemanticType.DECIMAL:
        return isinstance(value, (int, Decimal)) and Decimal(value).is_finite()
    if kind is SemanticType.CATEGORICAL:
        return isinstance(value, str)
    return False


_OPS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _predicate_mask(node, snapshot: DatasetSnapshot, bindings: dict) -> np.ndarray:
    if isinstance(node, Comparison):
        operand = bindings[node.operand.name] if isinstance(node.operand, ParamRef) else node.operand
        col = snapshot.columns[node.column]
        if col.dtype != object and isinstance(operand, Decimal):
            col = col.astype(object)
        return np.asarray(_OPS[node.op](col, operand), dtype=bool)
    if isinstance(node, And):
        out = np.ones(snapshot.n_rows, dtype=bool)
        for item in node.items:
            out &= _predicate_mask(item, snapshot, bindings)
        return out
    if isinstance(node, Or):
        out = np.zeros(snapshot.n_rows, dtype=bool)
        for item in node.items:
            out |= _predicate_mask(item, snapshot, bindings)
        return out
    if isinstance(node, Not):
        return ~_predicate_mask(node.item, snapshot, bindings)
    raise EvaluationError(f"unknown predicate node {type(node).__name__}")


def _aggregate(func: str, column: np.ndarray | None, kind: SemanticType | None, idx: np.ndarray):
    if func == "count":
        return len(idx)
    values = column[idx]
    if func == "histogram":
        cats, counts = np.unique(values.astype(str), return_counts=True)
        return {str(c): int(n) for c, n in zip(cats, counts)}
    if kind is SemanticType.INTEGER:
        if func in ("sum", "mean"):
            total = sum(int(v) for v in values)
            if abs(total) > INT64_MAX:
                raise EvaluationError("integer overflow in sum")
            if func == "sum":
                return total
            with localcontext() as ctx:
                ctx.prec = 80
                return round6(Decimal(total) / len(idx))
        return int(values.min()) if func == "min" else int(values.max())
    with localcontext() as ctx:
        ctx.prec = 80
        if func in ("sum", "mean"):
            total = sum(values, Decimal(0))
            if abs(total) > INT64_MAX:
                raise EvaluationError("decimal overflow in sum")
            return round6(total if func == "sum" else total / len(idx))
        return round6(min(values) if func == "min" else max(values))


def evaluate(ast: AlgorithmAst, snapshot: DatasetSnapshot, mask, bindings: dict | None = None) -> AggregateTable:
    """Run ``ast`` over the rows where ``mask`` and the filter both hold.

    Groups with no contributing rows are omitted; rows come back sorted by
    group key.
    """
    bindings = bindings or {}
    check_bindings(ast, bindings)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (snapshot.n_rows,):
        raise EvaluationError("consent mask length does not match snapshot")
    selected = mask.copy()
    if ast.filter is not None:
        selected &= _predicate_mask(ast.filter, snapshot, bindings)
    row_ids = np.flatnonzero(selected)

    groups: dict[tuple, list[int]] = {}
    if ast.group_by:
        key_cols = [snapshot.columns[c] for c in ast.group_by]
        for i in row_ids:
            groups.setdefault(tuple(str(col[i]) for col in key_cols), []).append(int(i))
    elif len(row_ids):
        groups[()] = [int(i) for i in row_ids]

    rows = []
    for key in sorted(groups):
        idx = np.array(groups[key], dtype=np.int64)
        values = {}
        for agg in ast.aggregates:
            column = snapshot.columns[agg.column] if agg.column else None
            kind = snapshot.column_type(agg.column) if agg.column else None
            values[agg.output] = _aggregate(agg.function, column, kind, idx)
        rows.append(AggregateRow(key, values, frozenset(groups[key])))
    return AggregateTable(tuple(ast.group_by), tuple(rows))
