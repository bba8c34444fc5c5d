"""Safe-answer policy: k-threshold suppression and the differencing guard."""
from __future__ import annotations

import threading
import uuid
from collections import deque
from dataclasses import dataclass, field

from .dsl import AggregateRow, AggregateTable

SUPPRESSED = "SUPPRESSED"
RELATED_QUERY = "related-query-detected"


@dataclass(frozen=True)
class PolicyConfig:
    k_min: int = 10
    differencing_window: int = 100
    suppression_marker: str = SUPPRESSED

    def __post_init__(self):
        if isinstance(self.k_min, bool) or not isinstance(self.k_min, int) or self.k_min < 2:
            raise ValueError("k_min must be an integer >= 2")
        if self.differencing_window < 1:
            raise ValueError("differencing_window must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        return cls(**{k: data[k] for k in ("k_min", "differencing_window", "suppression_marker") if k in data})


@dataclass(frozen=True)
class SafeRow:
    key: tuple
    values: dict
    cohort_size: int | str

    @property
    def suppressed(self) -> bool:
        return isinstance(self.cohort_size, str)


@dataclass(frozen=True)
class SafeTable:
    group_key_columns: tuple[str, ...]
    rows: tuple[SafeRow, ...]

    def to_dict(self) -> dict:
        return {
            "group_key_columns": list(self.group_key_columns),
            "rows": [
                {"key": list(r.key), "values": dict(r.values), "cohort_size": r.cohort_size}
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SafeTable":
        rows = []
        for r in data["rows"]:
            values = {k: _from_wire_value(v) for k, v in r["values"].items()}
            rows.append(SafeRow(tuple(r["key"]), values, r["cohort_size"]))
        return cls(tuple(data["group_key_columns"]), tuple(rows))


def _from_wire_value(value):
    # fractional values decode as Decimal; integral decimals arrive as int
    if isinstance(value, dict):
        return {k: int(v) if isinstance(v, int) else v for k, v in value.items()}
    return value


def apply_policy(table: AggregateTable, config: PolicyConfig) -> SafeTable:
    """Suppress every group whose cohort is below ``k_min``; drop row ids."""
    marker = config.suppression_marker
    rows = []
    for row in table.rows:
        if row.cohort_size < config.k_min:
            rows.append(SafeRow(row.key, {name: marker for name in row.values}, marker))
        else:
            rows.append(SafeRow(row.key, dict(row.values), row.cohort_size))
    return SafeTable(table.group_key_columns, tuple(rows))


def lift(safe: SafeTable, config: PolicyConfig) -> AggregateTable:
    """Turn a released table back into table form (for re-applying policy).

    Released rows get placeholder row ids of the disclosed size; suppressed
    rows get an empty cohort.
    """
    rows = []
    for row in safe.rows:
        if row.suppressed:
            ids = frozenset()
        else:
            ids = frozenset(range(int(row.cohort_size)))
        rows.append(AggregateRow(row.key, dict(row.values), ids))
    return AggregateTable(safe.group_key_columns, tuple(rows))


@dataclass
class _Entry:
    contract_id: uuid.UUID | None
    cohorts: tuple[frozenset, ...]


@dataclass
class QueryHistory:
    """Remembered released cohorts per (querier fingerprint, dataset id)."""

    window: int = 100
    _buffers: dict = field(default_factory=dict)
    _locks: dict = field(default_factory=dict)
    _guard: threading.Lock = field(default_factory=threading.Lock)

    def lock_for(self, key) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    def buffer(self, key) -> deque:
        with self._guard:
            buf = self._buffers.get(key)
            if buf is None:
                buf = self._buffers[key] = deque(maxlen=self.window)
            return buf

    def remembered(self, querier, dataset_id) -> list[frozenset]:
        buf = self._buffers.get(_key(querier, dataset_id), ())
        return [c for entry in buf for c in entry.cohorts]

    def __len__(self) -> int:
        return sum(len(b) for b in self._buffers.values())


def _key(querier, dataset_id):
    fp = getattr(querier, "key_fingerprint", querier)
    return (fp, str(dataset_id))


@dataclass(frozen=True)
class GuardDecision:
    allowed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.allowed


def differencing_guard(
    history: QueryHistory,
    querier,
    dataset_id,
    new_cohorts,
    config: PolicyConfig,
    contract_id: uuid.UUID | None = None,
) -> GuardDecision:
    """Decline when a new cohort differs from a remembered one by 1..k_min-1 rows.

    Check and append happen under one lock per (querier, dataset).  Only
    cohorts large enough to be released (size >= k_min) are remembered, so
    different groups of one repeated query never trip each other.
    """
    key = _key(querier, dataset_id)
    new_cohorts = [frozenset(c) for c in new_cohorts]
    with history.lock_for(key):
        buf = history.buffer(key)
        for entry in buf:
            for old in entry.cohorts:
                for new in new_cohorts:
                    if 0 < len(old ^ new) < config.k_min:
                        return GuardDecision(False, RELATED_QUERY)
        released = tuple(c for c in new_cohorts if len(c) >= config.k_min)
        if released:
            buf.append(_Entry(contract_id, released))
    return GuardDecision(True)
