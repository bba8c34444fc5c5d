"""The data provider node: datasets, vetted templates and the contract pipeline."""
from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass
from datetime import timedelta
from enum import Enum

from .audit import AuditFailure, AuditLog, Kind
from .clock import format_ts, parse_ts, utcnow
from .consent import consent_mask, verify_token
from .crypto import Keypair, PrincipalId, Role, SignatureEnvelope, fingerprint, sign, verify
from .dataset import DatasetSnapshot, ingest_csv
from .dsl import DslError, EvaluationError, evaluate
from .policy import PolicyConfig, QueryHistory, apply_policy, differencing_guard
from .protocol import (
    AlgorithmTemplate,
    ConsentReceipt,
    Contract,
    ContractResponse,
    DeclineReason,
    InvariantError,
    Status,
    validate_contract,
)
from .transport import Service, TransportError

log = logging.getLogger(__name__)


class Rejection(str, Enum):
    WRONG_TARGET = "wrong-target"
    PARSE = "parse"
    INVALID_TEMPLATE = "invalid-template"
    UNTRUSTED_SIGNATURE = "untrusted-signature"
    DUPLICATE = "duplicate-algorithm"


@dataclass(frozen=True)
class Registration:
    accepted: bool
    reason: Rejection | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


class TemplateRegistry:
    """Vetted templates served by one repository, keyed by algorithm id."""

    def __init__(self, repository_id, trusted_keys: dict[str, bytes] | None = None, domains=()):
        self.repository_id = uuid.UUID(str(repository_id))
        self.trusted_keys = dict(trusted_keys or {})
        self.domains = tuple(domains)
        self._templates: dict[uuid.UUID, AlgorithmTemplate] = {}
        self._lock = threading.Lock()

    def trust(self, public_key: bytes) -> None:
        self.trusted_keys[fingerprint(public_key)] = public_key

    def get(self, algorithm_id) -> AlgorithmTemplate | None:
        return self._templates.get(uuid.UUID(str(algorithm_id)))

    def templates(self) -> list[AlgorithmTemplate]:
        return list(self._templates.values())

    def register(self, template: AlgorithmTemplate) -> Registration:
        if template.target_repository_id != self.repository_id:
            return Registration(False, Rejection.WRONG_TARGET)
        try:
            template.ast
        except DslError as exc:
            return Registration(False, Rejection.PARSE, str(exc))
        problems = template.invariant_problems(self.trusted_keys)
        if problems:
            reason = Rejection.UNTRUSTED_SIGNATURE
            if any("signature" not in p for p in problems):
                reason = Rejection.INVALID_TEMPLATE
            return Registration(False, reason, "; ".join(problems))
        with self._lock:
            if template.algorithm_id in self._templates:
                return Registration(False, Rejection.DUPLICATE)
            self._templates[template.algorithm_id] = template
        return Registration(True)


def transparency_request(subject_key: Keypair, at=None) -> dict:
    """Signed body for the subject transparency query."""
    doc = {"action": "transparency-query", "subject": subject_key.principal.to_dict(), "issued_at": format_ts(at or utcnow())}
    return {"request": doc, "signature": sign(doc, subject_key).to_dict(), "public_key": subject_key.public_key.hex()}


class ProviderNode(Service):
    """Runs contracts through verify -> consent -> evaluate -> guard -> policy -> sign -> audit."""

    def __init__(
        self,
        key: Keypair,
        repository_id,
        consent,
        policy: PolicyConfig | None = None,
        audit: AuditLog | None = None,
        trusted_vetting_keys: dict[str, bytes] | None = None,
        domains=(),
        clock=utcnow,
        max_skew: timedelta = timedelta(minutes=5),
    ):
        if key.role is not Role.DATA_PROVIDER:
            raise ValueError("provider key must have the data-provider role")
        self.key = key
        self.registry = TemplateRegistry(repository_id, trusted_vetting_keys, domains)
        # anything with rules_for(dataset_id) and public_key
        self.consent = consent
        self.policy = policy or PolicyConfig()
        self.history = QueryHistory(window=self.policy.differencing_window)
        self.audit = audit if audit is not None else AuditLog()
        self.clock = clock
        self.max_skew = max_skew
        self.datasets: dict[uuid.UUID, DatasetSnapshot] = {}
        self._audit_lock = threading.Lock()
        self.routes = {
            ("POST", "/contracts"): self._submit,
            ("GET", "/templates"): self._list_templates,
            ("GET", "/audit/head"): self._audit_head,
            ("POST", "/transparency"): self._transparency,
            ("GET", "/key"): self._key,
        }

    @property
    def principal(self) -> PrincipalId:
        return self.key.principal

    @property
    def repository_id(self) -> uuid.UUID:
        return self.registry.repository_id

    # --- setup ---------------------------------------------------------------

    def ingest_dataset(self, source, schema, dataset_id) -> DatasetSnapshot:
        snapshot = ingest_csv(source, schema, dataset_id)
        self.datasets[snapshot.dataset_id] = snapshot
        return snapshot

    def add_snapshot(self, snapshot: DatasetSnapshot) -> None:
        self.datasets[snapshot.dataset_id] = snapshot

    def register_template(self, template: AlgorithmTemplate) -> Registration:
        return self.registry.register(template)

    # --- pipeline ------------------------------------------------------------

    def handle_contract(self, contract: Contract) -> ContractResponse:
        now = self.clock()
        template = self.registry.get(contract.algorithm_id)
        dataset_id = template.dataset_id if template is not None else None
        verified_token = None
        outcome = None

        report = validate_contract(contract, self.registry, now, self.max_skew)
        if not report.passed:
            failed = report.failed()
            if "signature" not in failed and "known-algorithm" in failed:
                outcome = DeclineReason.UNKNOWN_ALGORITHM
            else:
                outcome = DeclineReason.INVALID_CONTRACT
        snapshot = None
        if outcome is None:
            snapshot = self.datasets.get(dataset_id)
            if snapshot is None or snapshot.schema != template.data_schema:
                outcome = DeclineReason.DATA_UNAVAILABLE
        if outcome is None:
            candidates = [t for t in contract.consent_tokens if t.dataset_id == dataset_id]
            for token in candidates:
                if verify_token(token, contract, now, self.consent.public_key, dataset_id):
                    verified_token = token
                    break
            if verified_token is None:
                outcome = DeclineReason.CONSENT_DENIED
        if outcome is None:
            try:
                rules = self.consent.rules_for(dataset_id)
            except TransportError:
                log.warning("consent authority unreachable; declining")
                outcome = DeclineReason.CONSENT_DENIED
        if outcome is None:
            mask = consent_mask(rules, snapshot, contract.algorithm_id, contract.querier, now)
            try:
                table = evaluate(template.ast, snapshot, mask, contract.parameter_bindings)
            except EvaluationError:
                outcome = DeclineReason.INVALID_CONTRACT
        if outcome is None:
            decision = differencing_guard(
                self.history, contract.querier, dataset_id, table.cohorts(), self.policy, contract.contract_id
            )
            if not decision:
                outcome = DeclineReason.RELATED_QUERY

        if outcome is None:
            receipt = ConsentReceipt(
                algorithm_id=contract.algorithm_id,
                dataset_id=dataset_id,
                data_provider=self.principal,
                querier=contract.querier,
                terms_of_use=template.terms_of_use,
                token_id=verified_token.token_id,
                executed_at=now,
            )
            response = ContractResponse(
                contract_id=contract.contract_id,
                status=Status.FULFILLED,
                provider=self.principal,
                responded_at=now,
                result=apply_policy(table, self.policy),
                dataset_ids_used=(dataset_id,),
                validity_duration=template.validity_seconds,
                consent_receipts=(receipt,),
            ).signed(self.key)
        else:
            response = ContractResponse.decline(contract.contract_id, outcome, self.key, at=now)

        self._record(contract.contract_id, contract.to_dict(), dataset_id, verified_token, response)
        return response

    def _record(self, contract_id, contract_doc, dataset_id, token, response: ContractResponse) -> None:
        kind = Kind.RESPONSE_ISSUED if response.fulfilled else Kind.DECLINE_ISSUED
        with self._audit_lock:
            self.audit.append(Kind.CONTRACT_RECEIVED, contract_id, contract_doc, dataset_id)
            if token is not None:
                self.audit.append(Kind.TOKEN_VERIFIED, contract_id, token.to_dict(), dataset_id)
            self.audit.append(kind, contract_id, response.to_dict(), dataset_id)

    def handle_wire(self, body: dict) -> ContractResponse | None:
        """Entry point for an undecoded contract body.

        Malformed contracts with a readable contract_id are declined and
        audited; ones without are rejected outright (``None``).
        """
        try:
            contract = Contract.from_dict(body)
        except (KeyError, TypeError, ValueError, InvariantError):
            try:
                contract_id = uuid.UUID(str(body["contract_id"]))
            except (KeyError, TypeError, ValueError):
                return None
            response = ContractResponse.decline(contract_id, DeclineReason.INVALID_CONTRACT, self.key, at=self.clock())
            self._record(contract_id, body, None, None, response)
            return response
        return self.handle_contract(contract)

    # --- transparency --------------------------------------------------------

    def query_by_subject_relevance(self, subject: PrincipalId) -> list:
        """Audit records for contracts run over datasets holding this subject."""
        relevant = {
            ds_id for ds_id, snap in self.datasets.items() if subject.key_fingerprint in set(snap.subjects())
        }
        return [r for r in self.audit.records() if r.dataset_id in relevant]

    # --- HTTP surface --------------------------------------------------------

    def _submit(self, body):
        try:
            response = self.handle_wire(body)
        except AuditFailure:
            return 503, {"error": "audit log unavailable"}
        if response is None:
            return 400, {"error": "malformed contract"}
        return 200, response.to_dict()

    def _list_templates(self, body):
        return 200, {"templates": [t.to_dict() for t in self.registry.templates()]}

    def _audit_head(self, body):
        return 200, {"head": self.audit.head, "length": len(self.audit)}

    def _transparency(self, body):
        request = body["request"]
        subject = PrincipalId.from_dict(request["subject"])
        public_key = bytes.fromhex(body["public_key"])
        envelope = SignatureEnvelope.from_dict(body["signature"])
        issued = parse_ts(request["issued_at"])
        if (
            subject.role is not Role.SUBJECT
            or envelope.signer != subject
            or request.get("action") != "transparency-query"
            or not verify(request, envelope, public_key)
            or abs(self.clock() - issued) > self.max_skew
        ):
            return 403, {"error": "request is not signed by the subject"}
        return 200, {"records": [r.to_dict() for r in self.query_by_subject_relevance(subject)]}

    def _key(self, body):
        return 200, {"principal": self.principal.to_dict(), "public_key": self.key.public_key.hex()}
