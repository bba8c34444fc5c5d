"""One provider, one vetted algorithm, one answer.

The querier never sees rows: it names a vetted algorithm, attaches a consent
token, and gets back a signed table of aggregates with small groups blanked.
"""
from _world import everyone_opts_in, load, provider, survey, vetted

from opal import Contract, Keypair, Role
from opal.cli import render_response

people, rows = survey(400)
node, authority, vetter = provider(k_min=10)
snap = load(node, rows)
everyone_opts_in(authority, people, snap.dataset_id)

# the algorithm is fixed and signed by a vetter before anyone can run it
source = """
PARAM min_age: integer
FILTER age >= $min_age
GROUP BY district
AGG count() AS people, mean(monthly_spend) AS avg_spend, max(age) AS oldest
"""
template = vetted(node, vetter, source, snap, description="spend by district")

querier = Keypair.generate(Role.QUERIER)
token = authority.issue_token(querier.principal, template.algorithm_id, snap.dataset_id, ttl=600)
contract = Contract.create(querier, template.algorithm_id, node.repository_id, {"min_age": 82}, [token])

response = node.handle_contract(contract)
print(render_response(response))
print("signature verifies:", response.verify_signature(node.key.public_key))

# groups under k_min come back as SUPPRESSED rather than as small numbers
suppressed = [r.key for r in response.result.rows if r.suppressed]
print("suppressed groups:", suppressed)
