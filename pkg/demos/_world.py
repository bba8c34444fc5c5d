"""Shared setup for the demo scripts: a synthetic survey and a provider to hold it."""
import uuid
from decimal import Decimal

import numpy as np

from opal import AlgorithmTemplate, ConsentAuthority, ConsentRule, DatasetSnapshot, Keypair, PolicyConfig, ProviderNode, Role

SCHEMA = [("person", "subject-id"), ("district", "categorical"), ("age", "integer"), ("monthly_spend", "decimal")]
DISTRICTS = np.array(["harbour", "hillside", "old-town", "riverside"])


def survey(n=400, seed=7):
    """``n`` people, each with their own subject key (so they can manage consent)."""
    rng = np.random.default_rng(seed)
    people = [Keypair.generate(Role.SUBJECT) for _ in range(n)]
    district = rng.choice(DISTRICTS, size=n, p=[0.4, 0.3, 0.2, 0.1])
    age = rng.integers(18, 90, size=n)
    spend = np.round(rng.gamma(2.0, 150.0, size=n), 2)
    rows = [[p.principal.key_fingerprint, str(d), int(a), Decimal(f"{s:.2f}")] for p, d, a, s in zip(people, district, age, spend)]
    return people, rows


def provider(k_min=10, domains=(), authority=None, vetter=None):
    authority = authority or ConsentAuthority()
    vetter = vetter or Keypair.generate(Role.DATA_PROVIDER)
    node = ProviderNode(
        Keypair.generate(Role.DATA_PROVIDER),
        uuid.uuid4(),
        authority,
        policy=PolicyConfig(k_min=k_min),
        trusted_vetting_keys={vetter.principal.key_fingerprint: vetter.public_key},
        domains=domains,
    )
    return node, authority, vetter


def load(node, rows, dataset_id=None):
    snap = DatasetSnapshot.from_rows(dataset_id or uuid.uuid4(), SCHEMA, rows)
    node.add_snapshot(snap)
    return snap


def everyone_opts_in(authority, people, dataset_id):
    rules = {}
    for p in people:
        rule = ConsentRule(uuid.uuid4(), p.principal, dataset_id)
        authority.store.add(rule)
        rules[p.principal.key_fingerprint] = rule
    return rules


def vetted(node, vetter, source, snap, algorithm_id=None, description="", terms="aggregate statistics only"):
    template = AlgorithmTemplate(
        template_id=uuid.uuid4(),
        algorithm_id=algorithm_id or uuid.uuid4(),
        description=description,
        algorithm_source=source,
        target_repository_id=node.repository_id,
        dataset_id=snap.dataset_id,
        data_schema=snap.schema,
        cost_to_querier=Decimal("0"),
        terms_of_use=terms,
        publisher=vetter.principal,
    ).vetted_by(vetter)
    assert node.register_template(template), "template rejected"
    return template
