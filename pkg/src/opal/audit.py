"""Append-only, hash-chained audit log of contracts and responses.

Only digests and identifiers are stored, never documents.  On disk the log
is one wire-encoded record per line; the head digest can be exported as a
single hex line for anchoring elsewhere.
"""
from __future__ import annotations

import hashlib
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path

from .canonical import canonicalize, digest, from_wire, to_wire
from .clock import format_ts, parse_ts, utcnow

GENESIS = "0" * 64


class Kind(str, Enum):
    CONTRACT_RECEIVED = "contract-received"
    RESPONSE_ISSUED = "response-issued"
    TOKEN_VERIFIED = "token-verified"
    DECLINE_ISSUED = "decline-issued"


class AuditFailure(RuntimeError):
    """The log could not be made durable; callers must fail closed."""


@dataclass(frozen=True)
class AuditRecord:
    sequence: int
    recorded_at: datetime
    kind: Kind
    contract_id: uuid.UUID
    payload_digest: str
    prev_hash: str
    this_hash: str
    dataset_id: uuid.UUID | None = None

    def body(self) -> dict:
        """Everything except ``this_hash``: the input to the chain hash."""
        return {
            "sequence": self.sequence,
            "recorded_at": format_ts(self.recorded_at),
            "kind": Kind(self.kind).value,
            "contract_id": str(self.contract_id),
            "dataset_id": None if self.dataset_id is None else str(self.dataset_id),
            "payload_digest": self.payload_digest,
            "prev_hash": self.prev_hash,
        }

    def to_dict(self) -> dict:
        return {**self.body(), "this_hash": self.this_hash}

    @classmethod
    def from_dict(cls, data: dict) -> "AuditRecord":
        return cls(
            sequence=data["sequence"],
            recorded_at=parse_ts(data["recorded_at"]),
            kind=Kind(data["kind"]),
            contract_id=uuid.UUID(data["contract_id"]),
            dataset_id=None if data.get("dataset_id") is None else uuid.UUID(data["dataset_id"]),
            payload_digest=data["payload_digest"],
            prev_hash=data["prev_hash"],
            this_hash=data["this_hash"],
        )


def chain_hash(prev_hash: str, body: dict) -> str:
    return hashlib.sha256(bytes.fromhex(prev_hash) + canonicalize(body)).hexdigest()


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    broken_at: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(records, expected_head: str | None = None) -> ChainStatus:
    """Check genesis, gapless sequencing and the hash recurrence.

    ``records`` may be AuditRecords or their dict form.  With
    ``expected_head`` a chain that is internally fine but ends on a different
    hash (e.g. truncated) is reported broken at the first missing sequence.
    """
    prev = GENESIS
    n = 0
    for position, rec in enumerate(records):
        n = position + 1
        try:
            if isinstance(rec, dict):
                rec = AuditRecord.from_dict(rec)
            body = rec.body()
        except (KeyError, ValueError, TypeError):
            return ChainStatus(False, position, "malformed record")
        if rec.sequence != position:
            return ChainStatus(False, position, "sequence gap")
        if rec.prev_hash != prev:
            return ChainStatus(False, position, "prev_hash mismatch")
        try:
            recomputed = chain_hash(rec.prev_hash, body)
        except ValueError:
            return ChainStatus(False, position, "malformed hash")
        if recomputed != rec.this_hash:
            return ChainStatus(False, position, "this_hash mismatch")
        prev = rec.this_hash
    if expected_head is not None and prev != expected_head.strip():
        return ChainStatus(False, n, "head mismatch")
    return ChainStatus(True)


class AuditLog:
    """Single-appender hash chain, optionally persisted to ``path``."""

    def __init__(self, path: str | Path | None = None, clock=utcnow):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._records = load_records(self.path)

    @property
    def head(self) -> str:
        return self._records[-1].this_hash if self._records else GENESIS

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def append(self, kind: Kind, contract_id, document, dataset_id=None) -> AuditRecord:
        with self._lock:
            seq = len(self._records)
            prev = self.head
            partial = AuditRecord(
                sequence=seq,
                recorded_at=self.clock(),
                kind=Kind(kind),
                contract_id=uuid.UUID(str(contract_id)),
                dataset_id=None if dataset_id is None else uuid.UUID(str(dataset_id)),
                payload_digest=digest(document),
                prev_hash=prev,
                this_hash="",
            )
            record = AuditRecord(**{**partial.__dict__, "this_hash": chain_hash(prev, partial.body())})
            if self.path is not None:
                try:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(to_wire(record.to_dict()) + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise AuditFailure(f"audit append failed: {exc.strerror}") from exc
            self._records.append(record)
            return record

    def verify(self, expected_head: str | None = None) -> ChainStatus:
        return verify_chain(self.records(), expected_head)

    def export_head(self, path: str | Path | None = None) -> str:
        line = self.head + "\n"
        if path is not None:
            Path(path).write_text(line)
        return line


def load_records(path: str | Path) -> list[AuditRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AuditRecord.from_dict(from_wire(line)) for line in fh if line.strip()]


def load_raw(path: str | Path) -> list[dict]:
    """Records as plain dicts, without validation (for tamper checking)."""
    with open(path, encoding="utf-8") as fh:
        return [from_wire(line) for line in fh if line.strip()]
