"""Dataset schemas, immutable snapshots and CSV ingestion."""
from __future__ import annotations

import csv
import io
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .clock import utcnow


class SemanticType(str, Enum):
    INTEGER = "integer"
    DECIMAL = "decimal"
    CATEGORICAL = "categorical"
    SUBJECT_ID = "subject-id"

    @property
    def numeric(self) -> bool:
        return self in (SemanticType.INTEGER, SemanticType.DECIMAL)


Schema = tuple[tuple[str, SemanticType], ...]

INT64_MAX = 2**63 - 1


def make_schema(columns: Iterable[Sequence]) -> Schema:
    """Normalize ``[(name, type), ...]`` into a validated schema tuple."""
    schema = tuple((str(name), SemanticType(kind)) for name, kind in columns)
    names = [name for name, _ in schema]
    if len(set(names)) != len(names):
        raise ValueError("duplicate column names in schema")
    return schema


def subject_columns(schema: Schema) -> list[str]:
    return [name for name, kind in schema if kind is SemanticType.SUBJECT_ID]


def schema_to_list(schema: Schema) -> list[list[str]]:
    return [[name, kind.value] for name, kind in schema]


class IngestError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


def _coerce(kind: SemanticType, text: str):
    if kind is SemanticType.INTEGER:
        value = int(text.strip())
        if abs(value) > INT64_MAX:
            raise ValueError("integer out of range")
        return value
    if kind is SemanticType.DECIMAL:
        value = Decimal(text.strip())
        if not value.is_finite():
            raise ValueError("non-finite decimal")
        return value
    if kind is SemanticType.SUBJECT_ID:
        if not text.strip():
            raise ValueError("empty subject identifier")
        return text.strip()
    return text


@dataclass(frozen=True, eq=False)
class DatasetSnapshot:
    """Immutable table of typed columns.

    Integer columns are int64 arrays; decimal, categorical and subject columns
    are object arrays (Decimal / str).  Arrays are marked read-only.
    """

    dataset_id: uuid.UUID
    schema: Schema
    columns: dict[str, np.ndarray]
    subject_column: str
    ingested_at: datetime = field(default_factory=utcnow)

    def __post_init__(self):
        lengths = {len(col) for col in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("ragged columns")
        for col in self.columns.values():
            col.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.subject_column])

    def column_type(self, name: str) -> SemanticType:
        return dict(self.schema)[name]

    def subjects(self) -> np.ndarray:
        return self.columns[self.subject_column]

    def row(self, i: int) -> dict:
        return {name: self.columns[name][i] for name, _ in self.schema}

    @classmethod
    def from_rows(cls, dataset_id, schema, rows: Sequence[Sequence], ingested_at=None) -> "DatasetSnapshot":
        """Build a snapshot from already-typed Python rows."""
        schema = make_schema(schema)
        subjects = subject_columns(schema)
        if len(subjects) != 1:
            raise IngestError("schema must contain exactly one subject-id column")
        columns = {}
        for j, (name, kind) in enumerate(schema):
            values = [r[j] for r in rows]
            if kind is SemanticType.INTEGER:
                columns[name] = np.array(values, dtype=np.int64)
            else:
                arr = np.empty(len(values), dtype=object)
                arr[:] = values
                columns[name] = arr
        return cls(
            dataset_id=uuid.UUID(str(dataset_id)),
            schema=schema,
            columns=columns,
            subject_column=subjects[0],
            ingested_at=ingested_at or utcnow(),
        )


def ingest_csv(source: str | Path | TextIO, schema, dataset_id) -> DatasetSnapshot:
    """Parse a CSV file whose header matches ``schema`` order exactly.

    Any malformed row rejects the whole file; row numbers in errors are
    1-based data rows (the header is row 0).
    """
    schema = make_schema(schema)
    if len(subject_columns(schema)) != 1:
        raise IngestError("schema must declare exactly one subject-id column")
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _ingest(fh, schema, dataset_id)
    return _ingest(source, schema, dataset_id)


def _ingest(fh: TextIO, schema: Schema, dataset_id) -> DatasetSnapshot:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty file: missing header row") from None
    expected = [name for name, _ in schema]
    if [h.strip() for h in header] != expected:
        raise IngestError(f"header mismatch: expected {expected}, found {header}", row=0)
    rows = []
    for lineno, record in enumerate(reader, start=1):
        if not record:
            continue
        if len(record) != len(schema):
            raise IngestError(f"expected {len(schema)} fields, found {len(record)}", row=lineno)
        typed = []
        for (name, kind), text in zip(schema, record):
            try:
                typed.append(_coerce(kind, text))
            except (ValueError, InvalidOperation):
                raise IngestError(f"cannot read value as {kind.value}", row=lineno, column=name) from None
        rows.append(typed)
    return DatasetSnapshot.from_rows(dataset_id, schema, rows)


def ingest_text(text: str, schema, dataset_id) -> DatasetSnapshot:
    return ingest_csv(io.StringIO(text), schema, dataset_id)
