"""Open Algorithms federation: vetted aggregate algorithms run where the data lives.

Providers execute signed templates over local datasets and release only
k-suppressed aggregate answers, gated by subject consent tokens and recorded
in a hash-chained audit log.  A gateway routes contracts across members and
collates their signed responses.
"""
from .audit import AuditLog, AuditRecord, Kind, verify_chain
from .canonical import CanonicalizationError, canonicalize, digest, from_wire, to_wire
from .consent import ConsentAuthority, ConsentClient, ConsentRule, ConsentService, Effect, consent_mask, verify_token
from .crypto import Keypair, PrincipalId, Role, SignatureEnvelope, UnknownSchemeError, sign, verify
from .dataset import DatasetSnapshot, SemanticType, ingest_csv
from .dsl import evaluate, parse
from .gateway import FederatedResponse, Gateway, Member, MembershipRegistry
from .policy import SUPPRESSED, PolicyConfig, QueryHistory, SafeTable, apply_policy, differencing_guard
from .protocol import (
    AlgorithmTemplate,
    ConsentReceipt,
    ConsentToken,
    Contract,
    ContractResponse,
    DeclineReason,
    Status,
    validate_contract,
)
from .provider import ProviderNode, TemplateRegistry

__version__ = "0.1.0"

__all__ = [
    "AlgorithmTemplate",
    "AuditLog",
    "AuditRecord",
    "CanonicalizationError",
    "ConsentAuthority",
    "ConsentClient",
    "ConsentReceipt",
    "ConsentRule",
    "ConsentService",
    "ConsentToken",
    "Contract",
    "ContractResponse",
    "DatasetSnapshot",
    "DeclineReason",
    "Effect",
    "FederatedResponse",
    "Gateway",
    "Keypair",
    "Kind",
    "Member",
    "MembershipRegistry",
    "PolicyConfig",
    "PrincipalId",
    "ProviderNode",
    "QueryHistory",
    "Role",
    "SUPPRESSED",
    "SafeTable",
    "SemanticType",
    "SignatureEnvelope",
    "Status",
    "TemplateRegistry",
    "UnknownSchemeError",
    "apply_policy",
    "canonicalize",
    "consent_mask",
    "differencing_guard",
    "digest",
    "evaluate",
    "from_wire",
    "ingest_csv",
    "parse",
    "sign",
    "to_wire",
    "validate_contract",
    "verify",
    "verify_chain",
    "verify_token",
]
