"""The whole thing over HTTP, driven from config files and the querier CLI.

Writes keys, a CSV, a vetted template and JSON configs into a scratch
directory, starts a consent authority, two providers and a gateway on local
ports, then runs ``opal-query`` against them.  The same configs work with
``opal-serve provider|gateway|consent CONFIG --port N`` in separate shells.
"""
import json
import os
import tempfile
import uuid
from decimal import Decimal
from pathlib import Path

import numpy as np

from opal import AlgorithmTemplate, ConsentRule, Keypair, Role
from opal.canonical import to_wire
from opal.cli import main as opal_query
from opal.config import load_consent_authority, load_gateway, load_provider
from opal.consent import ConsentService
from opal.transport import base_url, serve

root = Path(tempfile.mkdtemp(prefix="opal-demo-"))
rng = np.random.default_rng(11)
schema = [["person", "subject-id"], ["district", "categorical"], ["age", "integer"]]

vetter = Keypair.generate(Role.DATA_PROVIDER)
Keypair.generate(Role.CONSENT_AUTHORITY).save(root / "keys" / "ca")
Keypair.generate(Role.GATEWAY).save(root / "keys" / "gateway")
(root / "ca.json").write_text(json.dumps({"key_dir": "keys/ca", "rule_store": "rules.ndjson"}))
authority = load_consent_authority(root / "ca.json")
ca_url = base_url(serve(ConsentService(authority)))

algorithm_id = uuid.uuid4()
members = []
for name in ("north-clinic", "south-clinic"):
    key = Keypair.generate(Role.DATA_PROVIDER)
    key.save(root / "keys" / name)
    repo, ds = uuid.uuid4(), uuid.uuid4()
    people = [Keypair.generate(Role.SUBJECT) for _ in range(150)]
    lines = ["person,district,age"] + [
        f"{p.principal.key_fingerprint},{rng.choice(['east', 'west'])},{rng.integers(18, 90)}" for p in people
    ]
    (root / f"{name}.csv").write_text("\n".join(lines) + "\n")
    for p in people:
        authority.store.add(ConsentRule(uuid.uuid4(), p.principal, ds))
    template = AlgorithmTemplate(
        uuid.uuid4(), algorithm_id, "age profile by district",
        "GROUP BY district AGG count() AS n, mean(age) AS mean_age", repo, ds,
        tuple(map(tuple, schema)), Decimal("0"), "aggregate use only", vetter.principal,
    ).vetted_by(vetter)
    (root / f"{name}.template.json").write_text(to_wire(template.to_dict()))
    (root / f"{name}.json").write_text(json.dumps({
        "key_dir": f"keys/{name}", "repository_id": str(repo), "domains": ["clinics"],
        "audit_log": f"{name}.audit.ndjson", "policy": {"k_min": 10},
        "trusted_vetting_keys": [vetter.public_key.hex()],
        "consent_authority": {"endpoint": ca_url, "public_key": authority.public_key.hex()},
        "datasets": [{"dataset_id": str(ds), "csv": f"{name}.csv", "schema": schema}],
        "templates": [f"{name}.template.json"],
    }))
    url = base_url(serve(load_provider(root / f"{name}.json")))
    members.append({"public_key": key.public_key.hex(), "endpoint": url, "repository_ids": [str(repo)], "domains": ["clinics"]})

(root / "gateway.json").write_text(json.dumps({"key_dir": "keys/gateway", "members": members}))
gateway = load_gateway(root / "gateway.json")
gw_url = base_url(serve(gateway))

# the querier side: a key, the keys it trusts, and the CLI
os.environ["OPAL_KEY_DIR"] = str(root / "keys" / "me")
opal_query(["keygen"])
trust = root / "trusted.txt"
trust.write_text("\n".join([m["public_key"] for m in members] + [gateway.key.public_key.hex()]) + "\n")

print("\n$ opal-query templates --endpoint", gw_url)
opal_query(["templates", "--endpoint", gw_url])

print(f"\n$ opal-query run --endpoint {gw_url} --consent {ca_url} --algorithm-id {algorithm_id} --domain clinics ...")
code = opal_query(["run", "--endpoint", gw_url, "--consent", ca_url, "--algorithm-id", str(algorithm_id),
                   "--domain", "clinics", "--trust-file", str(trust)])
print("exit code", code)
print("\nscratch directory:", root)
