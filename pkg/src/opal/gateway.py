"""Federation gateway: routes contracts to members and collates signed answers."""
from __future__ import annotations

import dataclasses
import logging
import uuid
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from datetime import datetime

from .clock import format_ts, parse_ts, utcnow
from .crypto import Keypair, PrincipalId, Role, SignatureEnvelope, UnknownSchemeError, fingerprint, sign, verify
from .protocol import Contract, ContractResponse, DeclineReason, InvariantError
from .transport import Service, TransportError, transport_for

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


@dataclass(frozen=True)
class Member:
    public_key: bytes
    endpoint: object
    repository_ids: tuple[uuid.UUID, ...]
    domains: tuple[str, ...] = ()

    @property
    def principal(self) -> PrincipalId:
        return PrincipalId(Role.DATA_PROVIDER, fingerprint(self.public_key))

    def to_dict(self) -> dict:
        return {
            "principal": self.principal.to_dict(),
            "public_key": self.public_key.hex(),
            "endpoint": self.endpoint if isinstance(self.endpoint, str) else None,
            "repository_ids": [str(r) for r in self.repository_ids],
            "domains": list(self.domains),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Member":
        return cls(
            public_key=bytes.fromhex(data["public_key"]),
            endpoint=data["endpoint"],
            repository_ids=tuple(uuid.UUID(r) for r in data["repository_ids"]),
            domains=tuple(data.get("domains", ())),
        )


class MembershipRegistry:
    def __init__(self, members=()):
        self._members: dict[str, Member] = {}
        for m in members:
            self.add(m)

    def add(self, member: Member) -> None:
        taken = {r for m in self._members.values() for r in m.repository_ids}
        clash = taken.intersection(member.repository_ids)
        if clash:
            raise ValueError(f"repository ids already served by another member: {sorted(map(str, clash))}")
        self._members[member.principal.key_fingerprint] = member

    def members(self) -> list[Member]:
        return list(self._members.values())

    def __len__(self) -> int:
        return len(self._members)

    def by_repository(self, repository_id) -> Member | None:
        repository_id = uuid.UUID(str(repository_id))
        for m in self._members.values():
            if repository_id in m.repository_ids:
                return m
        return None

    def in_domain(self, domain: str) -> list[Member]:
        return [m for m in self._members.values() if domain in m.domains]

    def key_for(self, key_fingerprint: str) -> bytes | None:
        m = self._members.get(key_fingerprint)
        return m.public_key if m else None

    @classmethod
    def from_dict(cls, data: dict) -> "MembershipRegistry":
        return cls(Member.from_dict(m) for m in data["members"])


@dataclass(frozen=True)
class FederatedResponse:
    contract_ids: tuple[uuid.UUID, ...]
    member_responses: tuple[ContractResponse, ...]
    gateway: PrincipalId
    collated_at: datetime
    gateway_signature: SignatureEnvelope | None = None

    def signable(self) -> dict:
        doc = self.to_dict()
        del doc["gateway_signature"]
        return doc

    def to_dict(self) -> dict:
        return {
            "contract_ids": [str(c) for c in self.contract_ids],
            "member_responses": [r.to_dict() for r in self.member_responses],
            "gateway": self.gateway.to_dict(),
            "collated_at": format_ts(self.collated_at),
            "gateway_signature": None if self.gateway_signature is None else self.gateway_signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FederatedResponse":
        sig = data.get("gateway_signature")
        return cls(
            contract_ids=tuple(uuid.UUID(c) for c in data["contract_ids"]),
            member_responses=tuple(ContractResponse.from_dict(r) for r in data["member_responses"]),
            gateway=PrincipalId.from_dict(data["gateway"]),
            collated_at=parse_ts(data["collated_at"]),
            gateway_signature=None if sig is None else SignatureEnvelope.from_dict(sig),
        )

    def verify(self, gateway_key: bytes) -> bool:
        if self.gateway_signature is None or self.gateway_signature.signer != self.gateway:
            return False
        try:
            return verify(self.signable(), self.gateway_signature, gateway_key)
        except UnknownSchemeError:
            return False


class Gateway(Service):
    """Routes by contract headers only; never reads or alters result payloads."""

    def __init__(
        self,
        key: Keypair,
        registry: MembershipRegistry,
        transports: dict | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        allowed_queriers: set[str] | None = None,
        clock=utcnow,
    ):
        if key.role is not Role.GATEWAY:
            raise ValueError("gateway key must have the gateway role")
        self.key = key
        self.registry = registry
        self._transports = dict(transports or {})
        self.timeout = timeout
        self.allowed_queriers = allowed_queriers
        self.clock = clock
        self.routes = {
            ("POST", "/contracts"): self._submit,
            ("GET", "/templates"): self._list_templates,
            ("GET", "/members"): self._members,
            ("GET", "/key"): self._key,
        }

    @property
    def principal(self) -> PrincipalId:
        return self.key.principal

    def transport(self, member: Member):
        fp = member.principal.key_fingerprint
        if fp not in self._transports:
            self._transports[fp] = transport_for(member.endpoint, timeout=self.timeout)
        return self._transports[fp]

    def route(self, contract: Contract) -> list[Member]:
        if contract.target_domain:
            return self.registry.in_domain(contract.target_domain)
        member = self.registry.by_repository(contract.target_repository_id)
        return [member] if member is not None else []

    def _decline(self, contract_id, reason: DeclineReason, regarding=None) -> ContractResponse:
        return ContractResponse.decline(contract_id, reason, self.key, regarding=regarding, at=self.clock())

    def _ask(self, member: Member, body: dict):
        return self.transport(member).request("POST", "/contracts", body, timeout=self.timeout)

    def submit(self, contract: Contract) -> FederatedResponse:
        cid = contract.contract_id
        if not contract.signature_valid() or (
            self.allowed_queriers is not None and contract.querier.key_fingerprint not in self.allowed_queriers
        ):
            return self.collate([self._decline(cid, DeclineReason.INVALID_CONTRACT)], [cid])
        members = self.route(contract)
        if not members:
            return self.collate([self._decline(cid, DeclineReason.DATA_UNAVAILABLE)], [cid])

        body = contract.to_dict()
        pool = ThreadPoolExecutor(max_workers=len(members))
        futures = [pool.submit(self._ask, m, body) for m in members]
        wait(futures, timeout=self.timeout)
        pool.shutdown(wait=False, cancel_futures=True)

        responses = []
        for member, future in zip(members, futures):
            responses.append(self._member_answer(cid, member, future))
        return self.collate(responses, [cid])

    def _member_answer(self, contract_id, member: Member, future) -> ContractResponse:
        regarding = member.principal
        if not future.done():
            log.info("member %s timed out", regarding.short())
            return self._decline(contract_id, DeclineReason.DATA_UNAVAILABLE, regarding)
        try:
            status, out = future.result()
        except (TransportError, OSError) as exc:
            log.info("member %s unreachable: %s", regarding.short(), exc)
            return self._decline(contract_id, DeclineReason.DATA_UNAVAILABLE, regarding)
        if status != 200:
            return self._decline(contract_id, DeclineReason.DATA_UNAVAILABLE, regarding)
        try:
            response = ContractResponse.from_dict(out)
        except (KeyError, TypeError, ValueError, InvariantError):
            return self._decline(contract_id, DeclineReason.INVALID_CONTRACT, regarding)
        if response.provider != regarding or response.contract_id != contract_id:
            return self._decline(contract_id, DeclineReason.INVALID_CONTRACT, regarding)
        return response

    def _inner_valid(self, response: ContractResponse) -> bool:
        if response.provider == self.principal:
            return response.verify_signature(self.key.public_key)
        key = self.registry.key_for(response.provider.key_fingerprint)
        return key is not None and response.verify_signature(key)

    def collate(self, responses, contract_ids=None) -> FederatedResponse:
        """Package responses unchanged; unverifiable ones become gateway declines."""
        packaged = []
        for r in responses:
            if self._inner_valid(r):
                packaged.append(r)
            else:
                packaged.append(self._decline(r.contract_id, DeclineReason.INVALID_CONTRACT, regarding=r.provider))
        if contract_ids is None:
            contract_ids = list(dict.fromkeys(r.contract_id for r in responses))
        package = FederatedResponse(
            contract_ids=tuple(contract_ids),
            member_responses=tuple(packaged),
            gateway=self.principal,
            collated_at=self.clock(),
        )
        return dataclasses.replace(package, gateway_signature=sign(package.signable(), self.key))

    def list_templates(self) -> list[dict]:
        """Concatenation of every reachable member's template list."""
        out = []
        for member in self.registry.members():
            try:
                status, body = self.transport(member).request("GET", "/templates", timeout=self.timeout)
            except TransportError:
                log.info("member %s unreachable for template listing", member.principal.short())
                continue
            if status == 200:
                out.extend(body["templates"])
        return out

    def _submit(self, body):
        try:
            contract = Contract.from_dict(body)
        except (KeyError, TypeError, ValueError, InvariantError):
            try:
                cid = uuid.UUID(str(body["contract_id"]))
            except (KeyError, TypeError, ValueError):
                return 400, {"error": "malformed contract"}
            return 200, self.collate([self._decline(cid, DeclineReason.INVALID_CONTRACT)], [cid]).to_dict()
        return 200, self.submit(contract).to_dict()

    def _list_templates(self, body):
        return 200, {"templates": self.list_templates()}

    def _members(self, body):
        return 200, {"members": [m.to_dict() for m in self.registry.members()]}

    def _key(self, body):
        return 200, {"principal": self.principal.to_dict(), "public_key": self.key.public_key.hex()}
