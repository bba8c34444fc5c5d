"""Wire-visible protocol documents and contract validation.

Every document has ``to_dict`` (the JSON-compatible wire form, also the
input to canonicalization) and ``from_dict``.  ``signable()`` returns the
region covered by the document's signature(s).
"""
from __future__ import annotations

import base64
import dataclasses
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta
from decimal import Decimal
from enum import Enum
from functools import cached_property
from typing import Any, Callable

from .canonical import canonicalize
from .clock import format_ts, parse_ts, utcnow
from .crypto import (
    Keypair,
    PrincipalId,
    Role,
    SignatureEnvelope,
    UnknownSchemeError,
    sign,
    verify,
    verify_embedded,
)
from .dataset import SemanticType, make_schema, schema_to_list, subject_columns
from .dsl import AlgorithmAst, DslError, binding_matches, parse
from .policy import SafeTable

DEFAULT_VALIDITY_SECONDS = 86_400


class Status(str, Enum):
    FULFILLED = "fulfilled"
    DECLINED = "declined"


class DeclineReason(str, Enum):
    DATA_UNAVAILABLE = "data-unavailable"
    RELATED_QUERY = "related-query-detected"
    CONSENT_DENIED = "consent-denied"
    INVALID_CONTRACT = "invalid-contract"
    UNKNOWN_ALGORITHM = "unknown-algorithm"


def _uuid(value) -> uuid.UUID:
    return value if isinstance(value, uuid.UUID) else uuid.UUID(str(value))


def _opt_uuid(value):
    return None if value is None else _uuid(value)


def _opt_principal(value):
    return None if value is None else PrincipalId.from_dict(value)


def _opt(value, fn):
    return None if value is None else fn(value)


class InvariantError(ValueError):
    pass


# --- templates ---------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmTemplate:
    template_id: uuid.UUID
    algorithm_id: uuid.UUID
    description: str
    algorithm_source: str
    target_repository_id: uuid.UUID
    dataset_id: uuid.UUID
    data_schema: tuple
    cost_to_querier: Decimal
    terms_of_use: str
    publisher: PrincipalId
    validity_seconds: int = DEFAULT_VALIDITY_SECONDS
    vetting_signatures: tuple[SignatureEnvelope, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "data_schema", make_schema(self.data_schema))
        object.__setattr__(self, "cost_to_querier", Decimal(self.cost_to_querier))

    @cached_property
    def ast(self) -> AlgorithmAst:
        return parse(self.algorithm_source, self.data_schema)

    def signable(self) -> dict:
        doc = self.to_dict()
        del doc["vetting_signatures"]
        return doc

    def to_dict(self) -> dict:
        return {
            "template_id": str(self.template_id),
            "algorithm_id": str(self.algorithm_id),
            "description": self.description,
            "algorithm_source": self.algorithm_source,
            "target_repository_id": str(self.target_repository_id),
            "dataset_id": str(self.dataset_id),
            "data_schema": schema_to_list(self.data_schema),
            "cost_to_querier": self.cost_to_querier,
            "terms_of_use": self.terms_of_use,
            "publisher": self.publisher.to_dict(),
            "validity_seconds": self.validity_seconds,
            "vetting_signatures": [s.to_dict() for s in self.vetting_signatures],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlgorithmTemplate":
        return cls(
            template_id=_uuid(data["template_id"]),
            algorithm_id=_uuid(data["algorithm_id"]),
            description=data["description"],
            algorithm_source=data["algorithm_source"],
            target_repository_id=_uuid(data["target_repository_id"]),
            dataset_id=_uuid(data["dataset_id"]),
            data_schema=tuple(tuple(c) for c in data["data_schema"]),
            cost_to_querier=Decimal(str(data["cost_to_querier"])),
            terms_of_use=data["terms_of_use"],
            publisher=PrincipalId.from_dict(data["publisher"]),
            validity_seconds=int(data.get("validity_seconds", DEFAULT_VALIDITY_SECONDS)),
            vetting_signatures=tuple(SignatureEnvelope.from_dict(s) for s in data["vetting_signatures"]),
        )

    def vetted_by(self, key: Keypair) -> "AlgorithmTemplate":
        """Return a copy with one more vetting signature."""
        envelope = sign(self.signable(), key)
        return dataclasses.replace(self, vetting_signatures=self.vetting_signatures + (envelope,))

    def invariant_problems(self, trusted_keys: dict[str, bytes] | None = None) -> list[str]:
        """Human-readable list of broken invariants (empty when all hold).

        With ``trusted_keys`` (fingerprint -> public key) each signature must
        come from a trusted key; otherwise the embedded key is used.
        """
        problems = []
        if len(subject_columns(self.data_schema)) != 1:
            problems.append("schema must have exactly one subject-id column")
        if self.cost_to_querier < 0 or not self.cost_to_querier.is_finite():
            problems.append("cost_to_querier must be a non-negative decimal")
        if self.validity_seconds <= 0:
            problems.append("validity_seconds must be positive")
        try:
            self.ast
        except DslError as exc:
            problems.append(f"parse: {exc}")
        if not self.vetting_signatures:
            problems.append("no vetting signatures")
        for env in self.vetting_signatures:
            if not _verify_with(self.signable(), env, trusted_keys):
                problems.append(f"vetting signature by {env.signer.short()} does not verify")
        return problems


def _verify_with(document, envelope: SignatureEnvelope, keys: dict[str, bytes] | None) -> bool:
    try:
        if keys is None:
            return verify_embedded(document, envelope)
        key = keys.get(envelope.signer.key_fingerprint)
        return key is not None and verify(document, envelope, key)
    except UnknownSchemeError:
        return False


# --- consent documents -------------------------------------------------------


@dataclass(frozen=True)
class ConsentToken:
    token_id: uuid.UUID
    querier: PrincipalId
    algorithm_id: uuid.UUID
    dataset_id: uuid.UUID
    issued_at: datetime
    expires_at: datetime
    granting_rule_ids: tuple[uuid.UUID, ...]
    issuer: PrincipalId
    signature: SignatureEnvelope | None = None

    def __post_init__(self):
        if self.expires_at <= self.issued_at:
            raise InvariantError("consent token must expire after it is issued")

    def signable(self) -> dict:
        doc = self.to_dict()
        del doc["signature"]
        return doc

    def to_dict(self) -> dict:
        return {
            "token_id": str(self.token_id),
            "querier": self.querier.to_dict(),
            "algorithm_id": str(self.algorithm_id),
            "dataset_id": str(self.dataset_id),
            "issued_at": format_ts(self.issued_at),
            "expires_at": format_ts(self.expires_at),
            "granting_rule_ids": [str(r) for r in self.granting_rule_ids],
            "issuer": self.issuer.to_dict(),
            "signature": _opt(self.signature, SignatureEnvelope.to_dict),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConsentToken":
        return cls(
            token_id=_uuid(data["token_id"]),
            querier=PrincipalId.from_dict(data["querier"]),
            algorithm_id=_uuid(data["algorithm_id"]),
            dataset_id=_uuid(data["dataset_id"]),
            issued_at=parse_ts(data["issued_at"]),
            expires_at=parse_ts(data["expires_at"]),
            granting_rule_ids=tuple(_uuid(r) for r in data["granting_rule_ids"]),
            issuer=PrincipalId.from_dict(data["issuer"]),
            signature=_opt(data.get("signature"), SignatureEnvelope.from_dict),
        )


@dataclass(frozen=True)
class ConsentReceipt:
    algorithm_id: uuid.UUID
    dataset_id: uuid.UUID
    data_provider: PrincipalId
    querier: PrincipalId
    terms_of_use: str
    token_id: uuid.UUID
    executed_at: datetime

    def __post_init__(self):
        if not self.terms_of_use:
            raise InvariantError("receipt terms_of_use must be non-empty")

    def to_dict(self) -> dict:
        return {
            "algorithm_id": str(self.algorithm_id),
            "dataset_id": str(self.dataset_id),
            "data_provider": self.data_provider.to_dict(),
            "querier": self.querier.to_dict(),
            "terms_of_use": self.terms_of_use,
            "token_id": str(self.token_id),
            "executed_at": format_ts(self.executed_at),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConsentReceipt":
        return cls(
            algorithm_id=_uuid(data["algorithm_id"]),
            dataset_id=_uuid(data["dataset_id"]),
            data_provider=PrincipalId.from_dict(data["data_provider"]),
            querier=PrincipalId.from_dict(data["querier"]),
            terms_of_use=data["terms_of_use"],
            token_id=_uuid(data["token_id"]),
            executed_at=parse_ts(data["executed_at"]),
        )


# --- contracts ---------------------------------------------------------------


def _binding_to_wire(value):
    if isinstance(value, bool) or not isinstance(value, (int, Decimal, str)):
        raise InvariantError(f"unsupported binding value type {type(value).__name__}")
    return value


@dataclass(frozen=True)
class Contract:
    contract_id: uuid.UUID
    algorithm_id: uuid.UUID
    target_repository_id: uuid.UUID | None
    parameter_bindings: dict
    issued_at: datetime
    querier: PrincipalId
    consent_tokens: tuple[ConsentToken, ...] = ()
    payment_voucher: bytes | None = None
    target_domain: str | None = None
    signature: SignatureEnvelope | None = None

    def __post_init__(self):
        if self.target_repository_id is None and not self.target_domain:
            raise InvariantError("contract needs a target repository or a target domain")

    @classmethod
    def create(
        cls,
        querier_key: Keypair,
        algorithm_id,
        target_repository_id=None,
        parameter_bindings: dict | None = None,
        consent_tokens=(),
        payment_voucher: bytes | None = None,
        target_domain: str | None = None,
        issued_at: datetime | None = None,
        contract_id=None,
    ) -> "Contract":
        """Build and sign a contract; any consent tokens are inside the signed region."""
        unsigned = cls(
            contract_id=_uuid(contract_id or uuid.uuid4()),
            algorithm_id=_uuid(algorithm_id),
            target_repository_id=_opt_uuid(target_repository_id),
            parameter_bindings=dict(parameter_bindings or {}),
            issued_at=issued_at or utcnow(),
            querier=querier_key.principal,
            consent_tokens=tuple(consent_tokens),
            payment_voucher=payment_voucher,
            target_domain=target_domain,
        )
        return unsigned.signed(querier_key)

    def signed(self, key: Keypair) -> "Contract":
        return dataclasses.replace(self, signature=sign(self.signable(), key, self.querier))

    def signable(self) -> dict:
        doc = self.to_dict()
        del doc["signature"]
        return doc

    def to_dict(self) -> dict:
        return {
            "contract_id": str(self.contract_id),
            "algorithm_id": str(self.algorithm_id),
            "target_repository_id": _opt(self.target_repository_id, str),
            "target_domain": self.target_domain,
            "parameter_bindings": {k: _binding_to_wire(v) for k, v in self.parameter_bindings.items()},
            "consent_tokens": [t.to_dict() for t in self.consent_tokens],
            "payment_voucher": _opt(self.payment_voucher, lambda b: base64.b64encode(b).decode("ascii")),
            "issued_at": format_ts(self.issued_at),
            "querier": self.querier.to_dict(),
            "signature": _opt(self.signature, SignatureEnvelope.to_dict),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Contract":
        return cls(
            contract_id=_uuid(data["contract_id"]),
            algorithm_id=_uuid(data["algorithm_id"]),
            target_repository_id=_opt_uuid(data.get("target_repository_id")),
            target_domain=data.get("target_domain"),
            parameter_bindings=dict(data.get("parameter_bindings") or {}),
            consent_tokens=tuple(ConsentToken.from_dict(t) for t in data.get("consent_tokens") or ()),
            payment_voucher=_opt(data.get("payment_voucher"), lambda s: base64.b64decode(s, validate=True)),
            issued_at=parse_ts(data["issued_at"]),
            querier=PrincipalId.from_dict(data["querier"]),
            signature=_opt(data.get("signature"), SignatureEnvelope.from_dict),
        )

    def signature_valid(self) -> bool:
        if self.signature is None or self.signature.signer != self.querier:
            return False
        try:
            return verify_embedded(self.signable(), self.signature)
        except UnknownSchemeError:
            return False


# --- responses ---------------------------------------------------------------


@dataclass(frozen=True)
class ContractResponse:
    contract_id: uuid.UUID
    status: Status
    provider: PrincipalId
    responded_at: datetime
    result: SafeTable | None = None
    decline_reason: DeclineReason | None = None
    dataset_ids_used: tuple[uuid.UUID, ...] = ()
    validity_duration: int = 0
    consent_receipts: tuple[ConsentReceipt, ...] = ()
    # set on gateway-synthesized declines: the member the decline stands in for
    regarding: PrincipalId | None = None
    signature: SignatureEnvelope | None = None

    def __post_init__(self):
        object.__setattr__(self, "status", Status(self.status))
        if self.decline_reason is not None:
            object.__setattr__(self, "decline_reason", DeclineReason(self.decline_reason))
        if self.status is Status.FULFILLED:
            if self.result is None or self.decline_reason is not None:
                raise InvariantError("fulfilled responses carry a result and no decline reason")
        elif self.result is not None or self.decline_reason is None:
            raise InvariantError("declined responses carry a decline reason and no result")
        if self.validity_duration < 0:
            raise InvariantError("validity_duration must be non-negative")

    @classmethod
    def decline(cls, contract_id, reason: DeclineReason, key: Keypair, regarding=None, at=None) -> "ContractResponse":
        return cls(
            contract_id=_uuid(contract_id),
            status=Status.DECLINED,
            provider=key.principal,
            responded_at=at or utcnow(),
            decline_reason=reason,
            regarding=regarding,
        ).signed(key)

    @property
    def fulfilled(self) -> bool:
        return self.status is Status.FULFILLED

    def signed(self, key: Keypair) -> "ContractResponse":
        return dataclasses.replace(self, signature=sign(self.signable(), key, self.provider))

    def signable(self) -> dict:
        doc = self.to_dict()
        del doc["signature"]
        return doc

    def to_dict(self) -> dict:
        return {
            "contract_id": str(self.contract_id),
            "status": self.status.value,
            "result": _opt(self.result, SafeTable.to_dict),
            "decline_reason": _opt(self.decline_reason, lambda r: r.value),
            "dataset_ids_used": [str(d) for d in self.dataset_ids_used],
            "validity_duration": self.validity_duration,
            "consent_receipts": [r.to_dict() for r in self.consent_receipts],
            "responded_at": format_ts(self.responded_at),
            "provider": self.provider.to_dict(),
            "regarding": _opt(self.regarding, PrincipalId.to_dict),
            "signature": _opt(self.signature, SignatureEnvelope.to_dict),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContractResponse":
        return cls(
            contract_id=_uuid(data["contract_id"]),
            status=Status(data["status"]),
            result=_opt(data.get("result"), SafeTable.from_dict),
            decline_reason=_opt(data.get("decline_reason"), DeclineReason),
            dataset_ids_used=tuple(_uuid(d) for d in data.get("dataset_ids_used") or ()),
            validity_duration=int(data.get("validity_duration", 0)),
            consent_receipts=tuple(ConsentReceipt.from_dict(r) for r in data.get("consent_receipts") or ()),
            responded_at=parse_ts(data["responded_at"]),
            provider=PrincipalId.from_dict(data["provider"]),
            regarding=_opt_principal(data.get("regarding")),
            signature=_opt(data.get("signature"), SignatureEnvelope.from_dict),
        )

    def verify_signature(self, public_key: bytes) -> bool:
        if self.signature is None or self.signature.signer != self.provider:
            return False
        try:
            return verify(self.signable(), self.signature, public_key)
        except UnknownSchemeError:
            return False


# --- optional field encryption hook -----------------------------------------

ENCRYPTED_TAG = "encrypted_field"


@dataclass(frozen=True)
class EncryptedField:
    """Stand-in for a confidential field value.

    Only the wrapper is defined here; the cipher is supplied by the
    deployment profile through ``seal_field``.
    """

    recipient: PrincipalId
    scheme_label: str
    ciphertext: bytes

    def to_dict(self) -> dict:
        return {
            ENCRYPTED_TAG: {
                "recipient": self.recipient.to_dict(),
                "scheme_label": self.scheme_label,
                "ciphertext": base64.b64encode(self.ciphertext).decode("ascii"),
            }
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncryptedField":
        inner = data[ENCRYPTED_TAG]
        return cls(
            PrincipalId.from_dict(inner["recipient"]),
            inner["scheme_label"],
            base64.b64decode(inner["ciphertext"], validate=True),
        )


def is_encrypted(value: Any) -> bool:
    return isinstance(value, dict) and set(value) == {ENCRYPTED_TAG}


def seal_field(
    document: dict,
    name: str,
    recipient: PrincipalId,
    encrypt: Callable[[bytes], bytes],
    scheme_label: str,
) -> dict:
    """Replace ``document[name]`` with an encrypted wrapper over its canonical bytes."""
    out = dict(document)
    out[name] = EncryptedField(recipient, scheme_label, encrypt(canonicalize(document[name]))).to_dict()
    return out


# --- contract validation -----------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


CHECK_NAMES = ("signature", "known-algorithm", "repository", "bindings", "timestamp")


def check_binding_types(template: AlgorithmTemplate, bindings: dict) -> list[str]:
    """Names of bindings that are missing, unexpected or of the wrong type."""
    declared = template.ast.parameter_types()
    bad = [name for name in bindings if name not in declared]
    for name, kind in declared.items():
        if name not in bindings or not binding_matches(kind, bindings[name]):
            bad.append(name)
    return sorted(bad)


def validate_contract(
    contract: Contract,
    templates,
    clock: datetime | None = None,
    max_skew: timedelta = timedelta(minutes=5),
) -> ValidationReport:
    """Run every contract check; failures are report entries, never exceptions.

    ``templates`` needs ``get(algorithm_id)``, ``repository_id`` and
    ``domains``.
    """
    now = clock or utcnow()
    checks = [Check("signature", contract.signature_valid())]

    template = templates.get(contract.algorithm_id)
    checks.append(Check("known-algorithm", template is not None))

    if contract.target_repository_id is not None:
        repo_ok = contract.target_repository_id == templates.repository_id
    else:
        repo_ok = contract.target_domain in getattr(templates, "domains", ())
    checks.append(Check("repository", repo_ok))

    if template is None:
        checks.append(Check("bindings", True, "no template to check against"))
    else:
        bad = check_binding_types(template, contract.parameter_bindings)
        checks.append(Check("bindings", not bad, ", ".join(bad)))

    checks.append(Check("timestamp", contract.issued_at <= now + max_skew))
    return ValidationReport(tuple(checks))


__all__ = [
    "AlgorithmTemplate",
    "CHECK_NAMES",
    "Check",
    "ConsentReceipt",
    "ConsentToken",
    "Contract",
    "ContractResponse",
    "DeclineReason",
    "EncryptedField",
    "InvariantError",
    "Role",
    "SemanticType",
    "Status",
    "ValidationReport",
    "check_binding_types",
    "is_encrypted",
    "seal_field",
    "validate_contract",
]
