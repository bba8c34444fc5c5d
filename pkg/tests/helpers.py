"""Random generators and world builders shared by the test modules."""
from __future__ import annotations

import random
import secrets
import uuid
from decimal import Decimal

from opal import (
    AlgorithmTemplate,
    ConsentAuthority,
    Contract,
    DatasetSnapshot,
    Keypair,
    PolicyConfig,
    PrincipalId,
    ProviderNode,
    Role,
)
from opal.consent import ConsentRule, Effect

CATEGORIES = ["north", "south", "east", "west", "centre", "coast"]


def rand_fp(rng: random.Random) -> str:
    return "%064x" % rng.getrandbits(256)


def random_schema(rng: random.Random, max_cols: int = 8) -> list[tuple[str, str]]:
    n = rng.randint(2, max_cols)
    schema = [("subject", "subject-id")]
    kinds = ["integer", "decimal", "categorical"]
    for i in range(n - 1):
        schema.append((f"c{i}", rng.choice(kinds)))
    if not any(k == "categorical" for _, k in schema):
        schema[-1] = (schema[-1][0], "categorical")
    rng.shuffle(schema)
    return schema


class SentinelSource:
    """Globally unique values that must never surface in released output."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.strings: set[str] = set()

    def subject(self) -> str:
        s = rand_fp(self.rng)
        self.strings.add(s)
        return s

    def decimal(self) -> Decimal:
        # nine fractional digits: more than any released value carries
        text = f"{self.rng.randint(0, 999)}.{self.rng.randint(10**8, 10**9 - 1)}"
        self.strings.add(text)
        return Decimal(text)


def random_value(rng: random.Random, kind: str, n_levels: int = 4):
    if kind == "integer":
        return rng.randint(-50, 120)
    if kind == "decimal":
        return Decimal(rng.randint(-5000, 20000)) / 100
    return CATEGORIES[rng.randrange(n_levels)]


def random_rows(rng, schema, n, subjects=None, sentinels: SentinelSource | None = None, n_levels=4):
    rows = []
    for i in range(n):
        row = []
        for _, kind in schema:
            if kind == "subject-id":
                if subjects is not None:
                    row.append(subjects[i % len(subjects)])
                else:
                    row.append(sentinels.subject() if sentinels else rand_fp(rng))
            elif kind == "decimal" and sentinels is not None:
                row.append(sentinels.decimal())
            else:
                row.append(random_value(rng, kind, n_levels))
        rows.append(row)
    return rows


_OPS_NUM = ["=", "!=", "<", "<=", ">", ">="]


def _literal(rng, kind):
    if kind == "integer":
        return str(rng.randint(-40, 110))
    if kind == "decimal":
        return f"{rng.randint(-40, 180)}.{rng.randint(0, 99):02d}"
    return "'" + rng.choice(CATEGORIES) + "'"


def random_program(rng: random.Random, schema) -> tuple[str, dict]:
    """Random valid source for ``schema`` plus bindings for its parameters."""
    cols = [(n, k) for n, k in schema if k != "subject-id"]
    numeric = [n for n, k in cols if k in ("integer", "decimal")]
    categorical = [n for n, k in cols if k == "categorical"]
    kinds = dict(cols)
    params, bindings = [], {}

    def comparison():
        name = rng.choice([n for n, _ in cols])
        kind = kinds[name]
        if kind == "categorical":
            op = rng.choice(["=", "!="])
        else:
            op = rng.choice(_OPS_NUM)
        if rng.random() < 0.25:
            pname = f"p{len(params)}"
            ptype = kind
            if kind == "integer" and rng.random() < 0.3:
                ptype = "decimal"
            params.append(f"{pname}: {ptype}")
            if ptype == "categorical":
                bindings[pname] = rng.choice(CATEGORIES)
            elif ptype == "integer":
                bindings[pname] = rng.randint(-40, 110)
            else:
                bindings[pname] = Decimal(rng.randint(-4000, 18000)) / 100
            return f"{name} {op} ${pname}"
        return f"{name} {op} {_literal(rng, kind)}"

    def predicate(depth=0):
        r = rng.random()
        if depth >= 2 or r < 0.5:
            return comparison()
        if r < 0.7:
            return f"NOT ({predicate(depth + 1)})"
        joiner = " AND " if r < 0.85 else " OR "
        return "(" + joiner.join(predicate(depth + 1) for _ in range(rng.randint(2, 3))) + ")"

    parts = []
    filt = predicate() if rng.random() < 0.7 else None
    if params:
        parts.append("PARAM " + ", ".join(params))
    if filt:
        parts.append("FILTER " + filt)
    if categorical and rng.random() < 0.7:
        parts.append("GROUP BY " + ", ".join(rng.sample(categorical, rng.randint(1, min(2, len(categorical))))))
    aggs = ["count() AS n"]
    for i in range(rng.randint(0, 3)):
        options = ["count"]
        if numeric:
            options += ["sum", "mean", "min", "max"]
        if categorical:
            options.append("histogram")
        f = rng.choice(options)
        if f == "count":
            continue
        col = rng.choice(categorical if f == "histogram" else numeric)
        aggs.append(f"{f}({col}) AS a{i}")
    rng.shuffle(aggs)
    parts.append("AGG " + ", ".join(aggs))
    return "\n".join(parts), bindings


def rows_as_dicts(schema, rows) -> list[dict]:
    names = [n for n, _ in schema]
    return [dict(zip(names, r)) for r in rows]


def subject_principal(fp: str) -> PrincipalId:
    return PrincipalId(Role.SUBJECT, fp)


class World:
    """One provider, its consent authority, a vetting key and a querier."""

    def __init__(self, k_min=10, window=100, audit=None, domains=(), rng=None):
        self.rng = rng or random.Random(0)
        self.authority = ConsentAuthority()
        self.vetter = Keypair.generate(Role.DATA_PROVIDER)
        self.provider_key = Keypair.generate(Role.DATA_PROVIDER)
        self.querier = Keypair.generate(Role.QUERIER)
        self.repository_id = uuid.uuid4()
        self.node = ProviderNode(
            self.provider_key,
            self.repository_id,
            self.authority,
            policy=PolicyConfig(k_min=k_min, differencing_window=window),
            audit=audit,
            trusted_vetting_keys={self.vetter.principal.key_fingerprint: self.vetter.public_key},
            domains=domains,
        )

    def add_dataset(self, schema, rows, dataset_id=None) -> DatasetSnapshot:
        snap = DatasetSnapshot.from_rows(dataset_id or uuid.uuid4(), schema, rows)
        self.node.add_snapshot(snap)
        return snap

    def template(self, source, snapshot, description="test algorithm", terms="aggregate use only", algorithm_id=None, **kw):
        t = AlgorithmTemplate(
            template_id=uuid.uuid4(),
            algorithm_id=algorithm_id or uuid.uuid4(),
            description=description,
            algorithm_source=source,
            target_repository_id=kw.pop("repository_id", self.repository_id),
            dataset_id=snapshot.dataset_id,
            data_schema=snapshot.schema,
            cost_to_querier=Decimal("1.50"),
            terms_of_use=terms,
            publisher=self.vetter.principal,
            **kw,
        ).vetted_by(self.vetter)
        result = self.node.register_template(t)
        assert result, result
        return t

    def consent_all(self, snapshot, effect=Effect.ALLOW):
        rules = []
        for fp in dict.fromkeys(snapshot.subjects()):
            rule = ConsentRule(uuid.uuid4(), subject_principal(fp), snapshot.dataset_id, effect=effect)
            self.authority.store.add(rule)
            rules.append(rule)
        return rules

    def contract(self, template, bindings=None, querier=None, tokens=None, **kw):
        querier = querier or self.querier
        if tokens is None:
            token = self.authority.issue_token(querier.principal, template.algorithm_id, template.dataset_id, 600)
            tokens = [token] if token else []
        return Contract.create(querier, template.algorithm_id, template.target_repository_id, bindings or {}, tokens, **kw)

    def run(self, template, bindings=None, querier=None):
        return self.node.handle_contract(self.contract(template, bindings, querier))


def random_consent_rules(rng, subjects, dataset_id, algorithm_id, querier_fp, now, n_rules=None):
    """Mixed allow/deny/expired/revoked rules over ``subjects``."""
    from datetime import timedelta

    rules = []
    n_rules = n_rules if n_rules is not None else rng.randint(0, 2 * len(subjects))
    other_alg = str(uuid.uuid4())
    for _ in range(n_rules):
        fp = rng.choice(subjects)
        expires = None
        r = rng.random()
        if r < 0.15:
            expires = now - timedelta(seconds=rng.randint(1, 1000))
        elif r < 0.3:
            expires = now + timedelta(seconds=rng.randint(1, 1000))
        rules.append(
            ConsentRule(
                rule_id=uuid.uuid4(),
                subject=subject_principal(fp),
                dataset_id=dataset_id if rng.random() < 0.9 else uuid.uuid4(),
                algorithm_pattern=rng.choice(["*", "*", str(algorithm_id), other_alg]),
                querier_pattern=rng.choice(["*", "*", querier_fp, rand_fp(rng)]),
                effect=Effect.DENY if rng.random() < 0.25 else Effect.ALLOW,
                expires_at=expires,
                revoked=False,
            )
        )
    return rules


def random_token() -> str:
    return secrets.token_hex(8)


class Federation:
    """Several providers sharing one consent authority and vetting key, behind a gateway."""

    def __init__(self, n=3, holds=None, domain="health", rows=60, k_min=5, endpoints=None, rng=None):
        from opal import Gateway, Member, MembershipRegistry

        rng = rng or random.Random(0)
        self.authority = ConsentAuthority()
        self.vetter = Keypair.generate(Role.DATA_PROVIDER)
        self.querier = Keypair.generate(Role.QUERIER)
        self.algorithm_id = uuid.uuid4()
        self.schema = [("s", "subject-id"), ("region", "categorical"), ("spend", "decimal")]
        self.source = "GROUP BY region AGG count() AS n, mean(spend) AS avg"
        holds = holds if holds is not None else [True] * n
        self.worlds, self.snapshots, members = [], [], []
        for i in range(n):
            w = World(k_min=k_min, domains=(domain,), rng=rng)
            w.authority, w.vetter = self.authority, self.vetter
            w.node.consent = self.authority
            w.node.registry.trust(self.vetter.public_key)
            data = [[rand_fp(rng), rng.choice(CATEGORIES[:2]), Decimal(rng.randint(0, 9999)) / 100] for _ in range(rows)]
            snap = DatasetSnapshot.from_rows(uuid.uuid4(), self.schema, data)
            if holds[i]:
                w.node.add_snapshot(snap)
                w.consent_all(snap)
            w.template(self.source, snap, algorithm_id=self.algorithm_id)
            self.worlds.append(w)
            self.snapshots.append(snap)
            endpoint = endpoints[i] if endpoints else w.node
            members.append(Member(w.provider_key.public_key, endpoint, (w.repository_id,), (domain,)))
        self.registry = MembershipRegistry(members)
        self.gateway_key = Keypair.generate(Role.GATEWAY)
        self.gateway = Gateway(self.gateway_key, self.registry)
        self.domain = domain

    def tokens(self, querier=None):
        querier = querier or self.querier
        out = []
        for snap in self.snapshots:
            token = self.authority.issue_token(querier.principal, self.algorithm_id, snap.dataset_id, 600)
            if token:
                out.append(token)
        return out

    def broadcast(self, querier=None):
        querier = querier or self.querier
        return Contract.create(querier, self.algorithm_id, None, {}, self.tokens(querier), target_domain=self.domain)


def shutdown_all(servers):
    # shutdown() waits out a poll interval; do them side by side
    from concurrent.futures import ThreadPoolExecutor

    if servers:
        with ThreadPoolExecutor(len(servers)) as pool:
            list(pool.map(lambda s: s.shutdown(), servers))
    for s in servers:
        s.server_close()
