"""Principals, key material and the signature envelope.

Identity is key possession: a principal is named by the SHA-256 fingerprint
of its raw public key.  Signatures are made over canonical bytes and are
dispatched by ``scheme_label`` so other schemes can be registered later.
"""
from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import canonicalize

DEFAULT_SCHEME = "ed25519"
_HEX64 = re.compile(r"^[0-9a-f]{64}$")


class Role(str, Enum):
    QUERIER = "querier"
    DATA_PROVIDER = "data-provider"
    GATEWAY = "gateway"
    CONSENT_AUTHORITY = "consent-authority"
    SUBJECT = "subject"


class SigningError(Exception):
    pass


class UnknownSchemeError(Exception):
    """Raised by :func:`verify` when an envelope names an unregistered scheme."""


def fingerprint(public_key: bytes) -> str:
    return hashlib.sha256(public_key).hexdigest()


@dataclass(frozen=True)
class PrincipalId:
    role: Role
    key_fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not isinstance(self.key_fingerprint, str) or not _HEX64.match(self.key_fingerprint):
            raise ValueError("key_fingerprint must be 64 lowercase hex characters")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "key_fingerprint": self.key_fingerprint}

    @classmethod
    def from_dict(cls, data: dict) -> "PrincipalId":
        return cls(Role(data["role"]), data["key_fingerprint"])

    def short(self) -> str:
        return f"{self.role.value}:{self.key_fingerprint[:12]}"


class Keypair:
    """An Ed25519 signing key bound to a principal role."""

    def __init__(self, role: Role | str, private_key: Ed25519PrivateKey | None = None):
        self.role = Role(role)
        self._private = private_key or Ed25519PrivateKey.generate()
        self.public_key = self._private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        self.principal = PrincipalId(self.role, fingerprint(self.public_key))

    @classmethod
    def generate(cls, role: Role | str) -> "Keypair":
        return cls(role)

    @classmethod
    def from_seed(cls, role: Role | str, seed: bytes) -> "Keypair":
        """Deterministic key from a 32-byte seed (test vectors, fixtures)."""
        return cls(role, Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest()))

    def raw_sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def private_pem(self) -> bytes:
        return self._private.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    @classmethod
    def from_pem(cls, role: Role | str, pem: bytes) -> "Keypair":
        key = serialization.load_pem_private_key(pem, password=None)
        if not isinstance(key, Ed25519PrivateKey):
            raise SigningError("only Ed25519 private keys are supported")
        return cls(role, key)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        key_file = directory / "private.pem"
        key_file.write_bytes(self.private_pem())
        key_file.chmod(0o600)
        (directory / "public.hex").write_text(self.public_key.hex() + "\n")
        (directory / "role").write_text(self.role.value + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "Keypair":
        directory = Path(directory)
        role = (directory / "role").read_text().strip()
        return cls.from_pem(role, (directory / "private.pem").read_bytes())


def _verify_ed25519(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


SCHEMES: dict[str, Callable[[bytes, bytes, bytes], bool]] = {
    DEFAULT_SCHEME: _verify_ed25519,
}


@dataclass(frozen=True)
class SignatureEnvelope:
    signer: PrincipalId
    scheme_label: str
    payload_digest: str
    signature: bytes
    # carried so members of an open federation can check key possession;
    # trust decisions are still made on signer.key_fingerprint
    public_key: bytes | None = None

    def to_dict(self) -> dict:
        return {
            "signer": self.signer.to_dict(),
            "scheme_label": self.scheme_label,
            "payload_digest": self.payload_digest,
            "signature": base64.b64encode(self.signature).decode("ascii"),
            "public_key": self.public_key.hex() if self.public_key is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SignatureEnvelope":
        pk = data.get("public_key")
        return cls(
            signer=PrincipalId.from_dict(data["signer"]),
            scheme_label=data["scheme_label"],
            payload_digest=data["payload_digest"],
            signature=base64.b64decode(data["signature"], validate=True),
            public_key=bytes.fromhex(pk) if pk is not None else None,
        )


def sign(document: Any, key: Keypair, signer: PrincipalId | None = None) -> SignatureEnvelope:
    if signer is not None and signer != key.principal:
        raise SigningError(f"key does not belong to {signer.short()}")
    payload = canonicalize(document)
    return SignatureEnvelope(
        signer=key.principal,
        scheme_label=DEFAULT_SCHEME,
        payload_digest=hashlib.sha256(payload).hexdigest(),
        signature=key.raw_sign(payload),
        public_key=key.public_key,
    )


def verify(document: Any, envelope: SignatureEnvelope, public_key: bytes) -> bool:
    check = SCHEMES.get(envelope.scheme_label)
    if check is None:
        raise UnknownSchemeError(envelope.scheme_label)
    payload = canonicalize(document)
    if hashlib.sha256(payload).hexdigest() != envelope.payload_digest:
        return False
    if fingerprint(public_key) != envelope.signer.key_fingerprint:
        return False
    return check(public_key, payload, envelope.signature)


def verify_embedded(document: Any, envelope: SignatureEnvelope) -> bool:
    """Verify using the key carried in the envelope (key possession only)."""
    if envelope.public_key is None:
        return False
    return verify(document, envelope, envelope.public_key)
