"""Recursive-descent parser and static checker for the algorithm language.

See ``grammar.ebnf`` in this package for the grammar.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal

from ..dataset import SemanticType, make_schema
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


class DslError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class DslSyntaxError(DslError):
    pass


class UnknownColumnError(DslError):
    pass


class TypeMismatchError(DslError):
    pass


class SubjectReferenceError(DslError):
    pass


class ProjectionError(DslError):
    """The source tries to emit raw column values."""


KEYWORDS = {"PARAM", "FILTER", "GROUP", "BY", "AGG", "AS", "AND", "OR", "NOT"}
_PROJECTION_WORDS = {"select", "project", "raw", "row", "rows", "value", "values", "list", "first", "last", "collect"}
_OP_ALIASES = {"<>": "!=", "≠": "!=", "≤": "<=", "≥": ">=", "==": "="}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>'(?:[^']|'')*'|"(?:[^"]|"")*")
  | (?P<param>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|==|[=<>≠≤≥])
  | (?P<punct>[(),:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int

    @property
    def upper(self) -> str:
        return self.text.upper()


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, schema):
        self.tokens = tokenize(source)
        self.i = 0
        self.schema = dict(make_schema(schema))
        self.params: dict[str, Param] = {}

    # token helpers
    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.upper == word

    def expect_keyword(self, word: str) -> Token:
        if not self.at_keyword(word):
            self.fail(f"expected {word}")
        return self.advance()

    def expect_punct(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            self.fail(f"expected {text!r}")
        return self.advance()

    def expect_ident(self, what: str) -> Token:
        tok = self.peek()
        if tok.kind != "ident" or tok.upper in KEYWORDS:
            self.fail(f"expected {what}")
        return self.advance()

    def fail(self, message: str, tok: Token | None = None, cls=DslSyntaxError):
        tok = tok or self.peek()
        found = f", found {tok.text!r}" if tok.kind != "eof" else ", found end of input"
        raise cls(message + (found if cls is DslSyntaxError else ""), tok.line, tok.column)

    # schema helpers
    def column(self, tok: Token) -> SemanticType:
        kind = self.schema.get(tok.text)
        if kind is None:
            raise UnknownColumnError(f"unknown column {tok.text!r}", tok.line, tok.column)
        if kind is SemanticType.SUBJECT_ID:
            raise SubjectReferenceError(
                f"subject-id column {tok.text!r} cannot be referenced", tok.line, tok.column
            )
        return kind

    # grammar
    def program(self) -> AlgorithmAst:
        if self.at_keyword("PARAM"):
            self.advance()
            self.param_decl()
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.advance()
                self.param_decl()
        predicate = None
        if self.at_keyword("FILTER"):
            self.advance()
            predicate = self.or_expr()
        group_by: list[str] = []
        if self.at_keyword("GROUP"):
            self.advance()
            self.expect_keyword("BY")
            group_by.append(self.group_column())
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.advance()
                group_by.append(self.group_column())
            if len(set(group_by)) != len(group_by):
                self.fail("duplicate GROUP BY column", cls=TypeMismatchError)
        if not self.at_keyword("AGG"):
            self.fail("expected AGG clause")
        self.advance()
        aggregates = [self.aggregate()]
        while self.peek().kind == "punct" and self.peek().text == ",":
            self.advance()
            aggregates.append(self.aggregate())
        if self.peek().kind != "eof":
            self.fail("unexpected trailing input")
        outputs = [a.output for a in aggregates]
        if len(set(outputs)) != len(outputs):
            raise TypeMismatchError("duplicate aggregate output name", 1, 1)
        return AlgorithmAst(predicate, tuple(group_by), tuple(aggregates), tuple(self.params.values()))

    def param_decl(self):
        name = self.expect_ident("parameter name")
        self.expect_punct(":")
        type_tok = self.expect_ident("parameter type")
        try:
            kind = SemanticType(type_tok.text.lower())
        except ValueError:
            kind = None
        if kind is None or kind is SemanticType.SUBJECT_ID:
            self.fail("parameter type must be integer, decimal or categorical", type_tok)
        if name.text in self.params:
            raise DslSyntaxError(f"parameter {name.text!r} declared twice", name.line, name.column)
        self.params[name.text] = Param(name.text, kind)

    def or_expr(self):
        items = [self.and_expr()]
        while self.at_keyword("OR"):
            self.advance()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self):
        items = [self.not_expr()]
        while self.at_keyword("AND"):
            self.advance()
            items.append(self.not_expr())
        return items[0] if len(items) == 1 else And(tuple(items))

    def not_expr(self):
        if self.at_keyword("NOT"):
            self.advance()
            return Not(self.not_expr())
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            inner = self.or_expr()
            self.expect_punct(")")
            return inner
        return self.comparison()

    def comparison(self) -> Comparison:
        col_tok = self.expect_ident("column name")
        kind = self.column(col_tok)
        op_tok = self.peek()
        if op_tok.kind != "op":
            self.fail("expected comparison operator")
        self.advance()
        op = _OP_ALIASES.get(op_tok.text, op_tok.text)
        operand_tok = self.advance()
        if operand_tok.kind == "number":
            operand = Decimal(operand_tok.text) if "." in operand_tok.text else int(operand_tok.text)
            operand_type = SemanticType.DECIMAL
        elif operand_tok.kind == "string":
            quote = operand_tok.text[0]
            operand = operand_tok.text[1:-1].replace(quote * 2, quote)
            operand_type = SemanticType.CATEGORICAL
        elif operand_tok.kind == "param":
            name = operand_tok.text[1:]
            if name not in self.params:
                raise DslSyntaxError(f"undeclared parameter ${name}", operand_tok.line, operand_tok.column)
            operand = ParamRef(name)
            operand_type = self.params[name].type
        else:
            self.i -= 1
            self.fail("expected literal or $parameter")
        if kind.numeric:
            if not operand_type.numeric:
                raise TypeMismatchError(
                    f"numeric column {col_tok.text!r} compared with a categorical value",
                    operand_tok.line,
                    operand_tok.column,
                )
        else:
            if operand_type is not SemanticType.CATEGORICAL:
                raise TypeMismatchError(
                    f"categorical column {col_tok.text!r} compared with a number",
                    operand_tok.line,
                    operand_tok.column,
                )
            if op not in ("=", "!="):
                raise TypeMismatchError(
                    f"operator {op!r} is not defined for categorical columns", op_tok.line, op_tok.column
                )
        return Comparison(col_tok.text, op, operand)

    def group_column(self) -> str:
        tok = self.expect_ident("column name")
        kind = self.column(tok)
        if kind is not SemanticType.CATEGORICAL:
            raise TypeMismatchError(f"GROUP BY needs a categorical column, {tok.text!r} is {kind.value}", tok.line, tok.column)
        return tok.text

    def aggregate(self) -> Aggregate:
        tok = self.peek()
        if tok.kind != "ident" or tok.upper in KEYWORDS:
            self.fail("expected aggregate function")
        func_tok = self.advance()
        func = func_tok.text.lower()
        if func not in AGGREGATE_FUNCTIONS:
            nxt = self.peek()
            if func in _PROJECTION_WORDS or not (nxt.kind == "punct" and nxt.text == "("):
                raise ProjectionError(
                    "raw column values cannot be emitted; use an aggregate function",
                    func_tok.line,
                    func_tok.column,
                )
            raise DslSyntaxError(f"unknown aggregate function {func_tok.text!r}", func_tok.line, func_tok.column)
        self.expect_punct("(")
        column = None
        if self.peek().kind == "ident":
            col_tok = self.advance()
            kind = self.column(col_tok)
            column = col_tok.text
            if func == "count":
                raise TypeMismatchError("count() takes no column", col_tok.line, col_tok.column)
            if func == "histogram" and kind is not SemanticType.CATEGORICAL:
                raise TypeMismatchError("histogram needs a categorical column", col_tok.line, col_tok.column)
            if func in ("sum", "mean", "min", "max") and not kind.numeric:
                raise TypeMismatchError(f"{func} needs a numeric column", col_tok.line, col_tok.column)
        elif func != "count":
            self.fail(f"{func} needs a column")
        self.expect_punct(")")
        self.expect_keyword("AS")
        out = self.expect_ident("output name")
        return Aggregate(out.text, func, column)


def parse(source: str, schema) -> AlgorithmAst:
    """Parse ``source`` and check it against ``schema``."""
    return _Parser(source, schema).program()
