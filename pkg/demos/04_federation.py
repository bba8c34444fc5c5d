"""A gateway broadcasts one contract to every member of a domain.

Three hospitals-worth of survey data: two hold the dataset, the third has
registered the algorithm but not loaded data.  The gateway fans out, collects
each signed answer unchanged, and countersigns the bundle.
"""
import uuid

from _world import SCHEMA, everyone_opts_in, load, provider, survey, vetted

from opal import Contract, ConsentAuthority, DatasetSnapshot, Gateway, Keypair, Member, MembershipRegistry, Role
from opal.cli import render_response

authority = ConsentAuthority()
vetter = Keypair.generate(Role.DATA_PROVIDER)
algorithm_id = uuid.uuid4()
source = "GROUP BY district AGG count() AS n, mean(monthly_spend) AS avg"

members, snaps = [], []
for seed, has_data in [(1, True), (2, True), (3, False)]:
    node, _, _ = provider(k_min=10, domains=("city-health",), authority=authority, vetter=vetter)
    people, rows = survey(300, seed=seed)
    if has_data:
        snap = load(node, rows)
        everyone_opts_in(authority, people, snap.dataset_id)
    else:
        snap = DatasetSnapshot.from_rows(uuid.uuid4(), SCHEMA, [])
    vetted(node, vetter, source, snap, algorithm_id=algorithm_id)
    snaps.append(snap)
    members.append(Member(node.key.public_key, node, (node.repository_id,), ("city-health",)))

gateway = Gateway(Keypair.generate(Role.GATEWAY), MembershipRegistry(members))

querier = Keypair.generate(Role.QUERIER)
tokens = [t for t in (authority.issue_token(querier.principal, algorithm_id, s.dataset_id, 600) for s in snaps) if t]
contract = Contract.create(querier, algorithm_id, None, {}, tokens, target_domain="city-health")

package = gateway.submit(contract)
print("gateway signature verifies:", package.verify(gateway.key.public_key))
for response in package.member_responses:
    print()
    print(render_response(response))
