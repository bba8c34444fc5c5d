"""Every execution leaves a hash-chained trail that subjects can inspect.

Editing or dropping any line breaks the chain; the exported head digest
catches truncation at the end.
"""
import json
import tempfile
from pathlib import Path

from _world import everyone_opts_in, load, provider, survey, vetted

from opal import AuditLog, Contract, Keypair, Role, verify_chain
from opal.audit import load_raw
from opal.provider import transparency_request

workdir = Path(tempfile.mkdtemp())
people, rows = survey(100)
node, authority, vetter = provider(k_min=5)
node.audit = AuditLog(workdir / "audit.ndjson")
snap = load(node, rows)
everyone_opts_in(authority, people, snap.dataset_id)
template = vetted(node, vetter, "GROUP BY district AGG count() AS n", snap)

for _ in range(3):
    q = Keypair.generate(Role.QUERIER)
    token = authority.issue_token(q.principal, template.algorithm_id, snap.dataset_id, 600)
    node.handle_contract(Contract.create(q, template.algorithm_id, node.repository_id, {}, [token]))

head = node.audit.export_head(workdir / "head.txt").strip()
records = load_raw(workdir / "audit.ndjson")
print(len(records), "records; chain ok:", verify_chain(records, head).ok)

# flip one character of one stored digest
tampered = [dict(r) for r in records]
tampered[4]["payload_digest"] = "0" + tampered[4]["payload_digest"][1:]
status = verify_chain(tampered, head)
print("after tampering record 4:", status.ok, "broken at", status.broken_at, f"({status.reason})")

# cutting the tail leaves a consistent prefix, but not the exported head
print("truncated, checked against head:", verify_chain(records[:-2], head).ok)

# a subject asks which executions touched data about them
status, body = node.dispatch("POST", "/transparency", transparency_request(people[0]))
print("subject sees", len(body["records"]), "records, e.g.:")
print(json.dumps(body["records"][0], indent=2))
