from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Union

from ..dataset import SemanticType

AGGREGATE_FUNCTIONS = ("count", "sum", "mean", "min", "max", "histogram")
COMPARISON_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Param:
    name: str
    type: SemanticType


@dataclass(frozen=True)
class ParamRef:
    name: str


Literal = Union[int, Decimal, str]


@dataclass(frozen=True)
class Comparison:
    column: str
    op: str
    operand: Union[Literal, ParamRef]


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


Predicate = Union[Comparison, And, Or, Not]


@dataclass(frozen=True)
class Aggregate:
    output: str
    function: str
    column: str | None = None


@dataclass(frozen=True)
class AlgorithmAst:
    filter: Predicate | None
    group_by: tuple[str, ...]
    aggregates: tuple[Aggregate, ...]
    parameters: tuple[Param, ...] = ()

    def referenced_columns(self) -> set[str]:
        cols = set(self.group_by)
        cols.update(a.column for a in self.aggregates if a.column is not None)
        stack = [self.filter] if self.filter is not None else []
        while stack:
            node = stack.pop()
            if isinstance(node, Comparison):
                cols.add(node.column)
            elif isinstance(node, (And, Or)):
                stack.extend(node.items)
            elif isinstance(node, Not):
                stack.append(node.item)
        return cols

    def parameter_types(self) -> dict[str, SemanticType]:
        return {p.name: p.type for p in self.parameters}
