"""Build services from JSON configuration files.

Relative paths inside a config file resolve against the file's directory.
"""
from __future__ import annotations

import json
from datetime import timedelta
from pathlib import Path

from .audit import AuditLog
from .canonical import from_wire
from .consent import ConsentAuthority, ConsentClient, RuleStore
from .crypto import Keypair, Role, fingerprint
from .gateway import Gateway, MembershipRegistry
from .policy import PolicyConfig
from .protocol import AlgorithmTemplate
from .provider import ProviderNode
from .transport import HttpTransport


class ConfigError(ValueError):
    pass


def _load(path) -> tuple[dict, Path]:
    path = Path(path)
    return json.loads(path.read_text()), path.parent


def _path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _key(base: Path, cfg: dict, role: Role) -> Keypair:
    key = Keypair.load(_path(base, cfg["key_dir"]))
    if key.role is not role:
        raise ConfigError(f"key in {cfg['key_dir']} has role {key.role.value}, expected {role.value}")
    return key


def load_provider(path, consent=None) -> ProviderNode:
    """Provider from config; ``consent`` overrides the configured authority endpoint."""
    cfg, base = _load(path)
    if consent is None:
        ca = cfg["consent_authority"]
        consent = ConsentClient(HttpTransport(ca["endpoint"]), bytes.fromhex(ca["public_key"]))
    trusted = {fingerprint(bytes.fromhex(k)): bytes.fromhex(k) for k in cfg.get("trusted_vetting_keys", [])}
    node = ProviderNode(
        key=_key(base, cfg, Role.DATA_PROVIDER),
        repository_id=cfg["repository_id"],
        consent=consent,
        policy=PolicyConfig.from_dict(cfg.get("policy", {})),
        audit=AuditLog(_path(base, cfg["audit_log"])) if cfg.get("audit_log") else AuditLog(),
        trusted_vetting_keys=trusted,
        domains=cfg.get("domains", ()),
        max_skew=timedelta(seconds=cfg.get("clock_skew_seconds", 300)),
    )
    for ds in cfg.get("datasets", []):
        node.ingest_dataset(_path(base, ds["csv"]), ds["schema"], ds["dataset_id"])
    for tpath in cfg.get("templates", []):
        template = AlgorithmTemplate.from_dict(from_wire(_path(base, tpath).read_text()))
        result = node.register_template(template)
        if not result:
            raise ConfigError(f"template {tpath} rejected: {result.reason.value} {result.detail}")
    return node


def load_gateway(path) -> Gateway:
    cfg, base = _load(path)
    allowed = cfg.get("allowed_queriers")
    return Gateway(
        key=_key(base, cfg, Role.GATEWAY),
        registry=MembershipRegistry.from_dict(cfg),
        timeout=float(cfg.get("timeout", 10.0)),
        allowed_queriers=set(allowed) if allowed is not None else None,
    )


def load_consent_authority(path) -> ConsentAuthority:
    cfg, base = _load(path)
    store = RuleStore(_path(base, cfg["rule_store"])) if cfg.get("rule_store") else RuleStore()
    return ConsentAuthority(
        key=_key(base, cfg, Role.CONSENT_AUTHORITY),
        store=store,
        max_ttl=timedelta(seconds=cfg.get("max_ttl_seconds", 86_400)),
    )
