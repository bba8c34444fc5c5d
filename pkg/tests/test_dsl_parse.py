import random

import pytest

from helpers import random_program, random_schema
from opal.dsl import (
    DslSyntaxError,
    ProjectionError,
    SubjectReferenceError,
    TypeMismatchError,
    UnknownColumnError,
    parse,
)
from opal.dsl.ast import And, Comparison, Not, Or, ParamRef
from oracles import scan_columns

SCHEMA = [("pid", "subject-id"), ("age", "integer"), ("income", "decimal"), ("region", "categorical")]


def test_full_program():
    ast = parse(
        """
        # adults by region
        PARAM lo: integer, place: categorical
        FILTER age >= $lo AND NOT (region = $place OR income < 10.5)
        GROUP BY region
        AGG count() AS n, mean(income) AS avg, histogram(region) AS h
        """,
        SCHEMA,
    )
    assert ast.group_by == ("region",)
    assert [a.function for a in ast.aggregates] == ["count", "mean", "histogram"]
    assert isinstance(ast.filter, And) and isinstance(ast.filter.items[1], Not)
    assert isinstance(ast.filter.items[1].item, Or)
    first = ast.filter.items[0]
    assert first == Comparison("age", ">=", ParamRef("lo"))


def test_referenced_columns_match_token_scan():
    rng = random.Random(9)
    for _ in range(300):
        schema = random_schema(rng)
        source, _ = random_program(rng, schema)
        assert parse(source, schema).referenced_columns() == scan_columns(source)


@pytest.mark.parametrize("source,error", [
    ("AGG count() AS n FILTER age > 1", DslSyntaxError),
    ("FILTER age > AGG count() AS n", DslSyntaxError),
    ("AGG", DslSyntaxError),
    ("AGG count() AS n, count() AS n", TypeMismatchError),
    ("AGG sum(height) AS s", UnknownColumnError),
    ("FILTER region < 'x' AGG count() AS n", TypeMismatchError),
    ("FILTER age = 'x' AGG count() AS n", TypeMismatchError),
    ("AGG sum(region) AS s", TypeMismatchError),
    ("GROUP BY income AGG count() AS n", TypeMismatchError),
    ("AGG count(pid) AS n", SubjectReferenceError),
    ("AGG count(age) AS n", TypeMismatchError),
    ("FILTER pid = 'abc' AGG count() AS n", SubjectReferenceError),
    ("GROUP BY pid AGG count() AS n", SubjectReferenceError),
    ("AGG histogram(pid) AS h", SubjectReferenceError),
    ("AGG age AS a", ProjectionError),
    ("AGG select(age) AS a", ProjectionError),
    ("FILTER age > $lo AGG count() AS n", DslSyntaxError),
    ("PARAM lo: integer PARAM hi: integer AGG count() AS n", DslSyntaxError),
])
def test_rejections(source, error):
    with pytest.raises(error):
        parse(source, SCHEMA)


def test_errors_carry_position():
    with pytest.raises(UnknownColumnError) as exc:
        parse("AGG count() AS n,\n  sum(height) AS s", SCHEMA)
    assert exc.value.line == 2


def test_parameter_types():
    ast = parse("PARAM a: decimal, b: categorical FILTER income > $a AND region != $b AGG count() AS n", SCHEMA)
    assert {k: v.value for k, v in ast.parameter_types().items()} == {"a": "decimal", "b": "categorical"}
