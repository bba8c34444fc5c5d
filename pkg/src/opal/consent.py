"""Subject consent rules, token issuance and per-row consent masks."""
from __future__ import annotations

import dataclasses
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path

import numpy as np

from .canonical import from_wire, to_wire
from .clock import format_ts, parse_ts, utcnow
from .crypto import Keypair, PrincipalId, Role, SignatureEnvelope, UnknownSchemeError, fingerprint, sign, verify
from .dataset import DatasetSnapshot
from .protocol import ConsentToken, Contract
from .transport import Service, TransportError

WILDCARD = "*"
MAX_TTL = timedelta(hours=24)


class Effect(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


class ConsentError(Exception):
    pass


class RuleNotFound(ConsentError, KeyError):
    pass


class AuthenticationError(ConsentError):
    pass


@dataclass(frozen=True)
class ConsentRule:
    rule_id: uuid.UUID
    subject: PrincipalId
    dataset_id: uuid.UUID
    algorithm_pattern: str = WILDCARD
    querier_pattern: str = WILDCARD
    effect: Effect = Effect.ALLOW
    expires_at: datetime | None = None
    revoked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "effect", Effect(self.effect))
        if self.algorithm_pattern != WILDCARD:
            object.__setattr__(self, "algorithm_pattern", str(uuid.UUID(str(self.algorithm_pattern))))
        if self.querier_pattern != WILDCARD:
            pattern = getattr(self.querier_pattern, "key_fingerprint", self.querier_pattern)
            object.__setattr__(self, "querier_pattern", pattern)

    def active(self, at: datetime) -> bool:
        return not self.revoked and (self.expires_at is None or at < self.expires_at)

    def matches(self, algorithm_id, querier: PrincipalId, dataset_id, at: datetime) -> bool:
        return (
            self.active(at)
            and self.dataset_id == uuid.UUID(str(dataset_id))
            and self.algorithm_pattern in (WILDCARD, str(algorithm_id))
            and self.querier_pattern in (WILDCARD, querier.key_fingerprint)
        )

    def to_dict(self) -> dict:
        return {
            "rule_id": str(self.rule_id),
            "subject": self.subject.to_dict(),
            "dataset_id": str(self.dataset_id),
            "algorithm_pattern": self.algorithm_pattern,
            "querier_pattern": self.querier_pattern,
            "effect": self.effect.value,
            "expires_at": None if self.expires_at is None else format_ts(self.expires_at),
            "revoked": self.revoked,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConsentRule":
        return cls(
            rule_id=uuid.UUID(data["rule_id"]),
            subject=PrincipalId.from_dict(data["subject"]),
            dataset_id=uuid.UUID(data["dataset_id"]),
            algorithm_pattern=data["algorithm_pattern"],
            querier_pattern=data["querier_pattern"],
            effect=Effect(data["effect"]),
            expires_at=None if data.get("expires_at") is None else parse_ts(data["expires_at"]),
            revoked=bool(data.get("revoked", False)),
        )


def consenting_subjects(rules, algorithm_id, querier: PrincipalId, dataset_id, at: datetime) -> dict[str, list]:
    """Subjects with a matching allow rule and no matching deny rule.

    Returns fingerprint -> matching allow rules.
    """
    allows: dict[str, list] = {}
    denied: set[str] = set()
    for rule in rules:
        if not rule.matches(algorithm_id, querier, dataset_id, at):
            continue
        fp = rule.subject.key_fingerprint
        if rule.effect is Effect.DENY:
            denied.add(fp)
        else:
            allows.setdefault(fp, []).append(rule)
    return {fp: rs for fp, rs in allows.items() if fp not in denied}


def consent_mask(rules, snapshot: DatasetSnapshot, algorithm_id, querier: PrincipalId, at: datetime) -> np.ndarray:
    """Boolean mask over snapshot rows; subjects without rules are excluded."""
    allowed = consenting_subjects(rules, algorithm_id, querier, snapshot.dataset_id, at)
    subjects = snapshot.subjects()
    return np.fromiter((s in allowed for s in subjects), dtype=bool, count=len(subjects))


class RuleStore:
    """Rule table backed by an optional append-only event file.

    Writes are serialized by one lock; readers get an immutable snapshot.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._rules: dict[uuid.UUID, ConsentRule] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._replay()

    def _replay(self):
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = from_wire(line)
                if event["event"] == "set":
                    rule = ConsentRule.from_dict(event["rule"])
                    self._rules[rule.rule_id] = rule
                elif event["event"] == "revoke":
                    rid = uuid.UUID(event["rule_id"])
                    self._rules[rid] = dataclasses.replace(self._rules[rid], revoked=True)

    def _write(self, event: dict):
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(to_wire(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def add(self, rule: ConsentRule) -> uuid.UUID:
        with self._lock:
            if rule.rule_id in self._rules:
                raise ConsentError(f"rule {rule.rule_id} already exists")
            if rule.revoked:
                raise ConsentError("cannot store a rule that is already revoked")
            self._write({"event": "set", "rule": rule.to_dict()})
            self._rules[rule.rule_id] = rule
        return rule.rule_id

    def revoke(self, rule_id) -> None:
        rule_id = uuid.UUID(str(rule_id))
        with self._lock:
            rule = self._rules.get(rule_id)
            if rule is None:
                raise RuleNotFound(str(rule_id))
            if not rule.revoked:
                self._write({"event": "revoke", "rule_id": str(rule_id)})
                self._rules[rule_id] = dataclasses.replace(rule, revoked=True)

    def get(self, rule_id) -> ConsentRule:
        try:
            return self._rules[uuid.UUID(str(rule_id))]
        except KeyError:
            raise RuleNotFound(str(rule_id)) from None

    def snapshot(self) -> tuple[ConsentRule, ...]:
        with self._lock:
            return tuple(self._rules.values())

    def for_dataset(self, dataset_id) -> tuple[ConsentRule, ...]:
        dataset_id = uuid.UUID(str(dataset_id))
        return tuple(r for r in self.snapshot() if r.dataset_id == dataset_id)


def revoke_request(rule_id) -> dict:
    """The document a subject signs to revoke a rule."""
    return {"action": "revoke-consent-rule", "rule_id": str(rule_id)}


class TokenFailure(str, Enum):
    BAD_SIGNATURE = "bad-signature"
    EXPIRED = "expired"
    MISMATCH = "mismatch"
    NOT_BOUND = "not-bound"
    CONTRACT_SIGNATURE = "contract-signature-invalid"


@dataclass(frozen=True)
class TokenCheck:
    passed: bool
    reason: TokenFailure | None = None

    def __bool__(self) -> bool:
        return self.passed


def token_signature_valid(token: ConsentToken, authority_key: bytes) -> bool:
    if token.signature is None or token.signature.signer != token.issuer:
        return False
    if token.issuer.role is not Role.CONSENT_AUTHORITY:
        return False
    try:
        return verify(token.signable(), token.signature, authority_key)
    except UnknownSchemeError:
        return False


def verify_token(
    token: ConsentToken,
    contract: Contract,
    at: datetime,
    authority_key: bytes,
    dataset_id=None,
) -> TokenCheck:
    """Check a consent token against the contract that should carry it."""
    if not token_signature_valid(token, authority_key):
        return TokenCheck(False, TokenFailure.BAD_SIGNATURE)
    if not (at < token.expires_at):
        return TokenCheck(False, TokenFailure.EXPIRED)
    if (
        token.querier != contract.querier
        or token.algorithm_id != contract.algorithm_id
        or (dataset_id is not None and token.dataset_id != uuid.UUID(str(dataset_id)))
    ):
        return TokenCheck(False, TokenFailure.MISMATCH)
    if token not in contract.consent_tokens:
        return TokenCheck(False, TokenFailure.NOT_BOUND)
    if contract.signature_valid():
        return TokenCheck(True)
    others = tuple(t for t in contract.consent_tokens if t != token)
    if dataclasses.replace(contract, consent_tokens=others).signature_valid():
        # the signature only covers the contract without this token
        return TokenCheck(False, TokenFailure.NOT_BOUND)
    return TokenCheck(False, TokenFailure.CONTRACT_SIGNATURE)


@dataclass(frozen=True)
class TokenDenial:
    reason: str = "no-consent"

    def __bool__(self) -> bool:
        return False


class ConsentAuthority:
    """Authorization server holding subject rules and issuing consent tokens."""

    def __init__(self, key: Keypair | None = None, store: RuleStore | None = None, max_ttl: timedelta = MAX_TTL, clock=utcnow):
        self.key = key or Keypair.generate(Role.CONSENT_AUTHORITY)
        if self.key.role is not Role.CONSENT_AUTHORITY:
            raise ValueError("consent authority key must have the consent-authority role")
        self.store = store if store is not None else RuleStore()
        self.max_ttl = max_ttl
        self.clock = clock

    @property
    def principal(self) -> PrincipalId:
        return self.key.principal

    @property
    def public_key(self) -> bytes:
        return self.key.public_key

    def _authenticate(self, subject: PrincipalId, document, signature: SignatureEnvelope, subject_key: bytes):
        if fingerprint(subject_key) != subject.key_fingerprint or signature.signer != subject:
            raise AuthenticationError("request is not signed by the rule's subject")
        try:
            ok = verify(document, signature, subject_key)
        except UnknownSchemeError:
            ok = False
        if not ok:
            raise AuthenticationError("subject signature does not verify")

    def set_rule(self, rule: ConsentRule, signature: SignatureEnvelope, subject_key: bytes) -> uuid.UUID:
        self._authenticate(rule.subject, rule.to_dict(), signature, subject_key)
        return self.store.add(rule)

    def revoke_rule(self, rule_id, signature: SignatureEnvelope, subject_key: bytes) -> bool:
        rule = self.store.get(rule_id)
        self._authenticate(rule.subject, revoke_request(rule_id), signature, subject_key)
        self.store.revoke(rule_id)
        return True

    def issue_token(self, querier: PrincipalId, algorithm_id, dataset_id, ttl: float) -> ConsentToken | TokenDenial:
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        now = self.clock()
        granted = consenting_subjects(self.store.snapshot(), algorithm_id, querier, dataset_id, now)
        if not granted:
            return TokenDenial()
        rule_ids = sorted({r.rule_id for rules in granted.values() for r in rules}, key=str)
        token = ConsentToken(
            token_id=uuid.uuid4(),
            querier=querier,
            algorithm_id=uuid.UUID(str(algorithm_id)),
            dataset_id=uuid.UUID(str(dataset_id)),
            issued_at=now,
            expires_at=now + min(timedelta(seconds=ttl), self.max_ttl),
            granting_rule_ids=tuple(rule_ids),
            issuer=self.principal,
        )
        return dataclasses.replace(token, signature=sign(token.signable(), self.key))

    def introspect(self, token: ConsentToken) -> dict:
        now = self.clock()
        if not token_signature_valid(token, self.public_key):
            return {"active": False, "reason": TokenFailure.BAD_SIGNATURE.value}
        if not now < token.expires_at:
            return {"active": False, "reason": TokenFailure.EXPIRED.value}
        return {"active": True, "reason": None}

    def rules_for(self, dataset_id) -> tuple[ConsentRule, ...]:
        return self.store.for_dataset(dataset_id)

    def consent_mask(self, snapshot: DatasetSnapshot, algorithm_id, querier: PrincipalId, at=None) -> np.ndarray:
        return consent_mask(self.store.for_dataset(snapshot.dataset_id), snapshot, algorithm_id, querier, at or self.clock())


class ConsentService(Service):
    """HTTP surface of a :class:`ConsentAuthority`."""

    def __init__(self, authority: ConsentAuthority):
        self.authority = authority
        self.routes = {
            ("POST", "/rules"): self._set_rule,
            ("POST", "/rules/revoke"): self._revoke,
            ("POST", "/rules/query"): self._query,
            ("POST", "/tokens"): self._token,
            ("POST", "/tokens/introspect"): self._introspect,
            ("GET", "/key"): self._key,
        }

    def _set_rule(self, body):
        try:
            rule_id = self.authority.set_rule(
                ConsentRule.from_dict(body["rule"]),
                SignatureEnvelope.from_dict(body["signature"]),
                bytes.fromhex(body["subject_key"]),
            )
        except AuthenticationError as exc:
            return 403, {"error": str(exc)}
        except ConsentError as exc:
            return 409, {"error": str(exc)}
        return 201, {"rule_id": str(rule_id)}

    def _revoke(self, body):
        try:
            self.authority.revoke_rule(
                body["rule_id"],
                SignatureEnvelope.from_dict(body["signature"]),
                bytes.fromhex(body["subject_key"]),
            )
        except RuleNotFound:
            return 404, {"error": "unknown rule"}
        except AuthenticationError as exc:
            return 403, {"error": str(exc)}
        return 200, {"revoked": True}

    def _query(self, body):
        return 200, {"rules": [r.to_dict() for r in self.authority.rules_for(body["dataset_id"])]}

    def _token(self, body):
        result = self.authority.issue_token(
            PrincipalId.from_dict(body["querier"]),
            body["algorithm_id"],
            body["dataset_id"],
            float(body.get("ttl", 3600)),
        )
        if isinstance(result, TokenDenial):
            return 200, {"status": "denied", "reason": result.reason}
        return 200, {"status": "issued", "token": result.to_dict()}

    def _introspect(self, body):
        return 200, self.authority.introspect(ConsentToken.from_dict(body["token"]))

    def _key(self, body):
        return 200, {"principal": self.authority.principal.to_dict(), "public_key": self.authority.public_key.hex()}


class ConsentClient:
    """Remote view of a consent authority, as used by providers and queriers."""

    def __init__(self, transport, public_key: bytes):
        self.transport = transport
        self.public_key = public_key

    def _post(self, path, body):
        status, out = self.transport.request("POST", path, body)
        if status >= 400:
            raise TransportError(f"consent authority returned {status}: {out.get('error')}")
        return out

    def rules_for(self, dataset_id) -> tuple[ConsentRule, ...]:
        out = self._post("/rules/query", {"dataset_id": str(dataset_id)})
        return tuple(ConsentRule.from_dict(r) for r in out["rules"])

    def request_token(self, querier: PrincipalId, algorithm_id, dataset_id, ttl: float = 3600) -> ConsentToken | TokenDenial:
        out = self._post(
            "/tokens",
            {"querier": querier.to_dict(), "algorithm_id": str(algorithm_id), "dataset_id": str(dataset_id), "ttl": ttl},
        )
        if out["status"] != "issued":
            return TokenDenial(out.get("reason", "no-consent"))
        return ConsentToken.from_dict(out["token"])

    def set_rule(self, rule: ConsentRule, subject_key: Keypair) -> uuid.UUID:
        body = {
            "rule": rule.to_dict(),
            "signature": sign(rule.to_dict(), subject_key).to_dict(),
            "subject_key": subject_key.public_key.hex(),
        }
        return uuid.UUID(self._post("/rules", body)["rule_id"])

    def revoke_rule(self, rule_id, subject_key: Keypair) -> None:
        body = {
            "rule_id": str(rule_id),
            "signature": sign(revoke_request(rule_id), subject_key).to_dict(),
            "subject_key": subject_key.public_key.hex(),
        }
        self._post("/rules/revoke", body)
