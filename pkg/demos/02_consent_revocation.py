"""A subject withdraws consent and the very next answer no longer counts them."""
from _world import everyone_opts_in, load, provider, survey, vetted

from opal import Contract, Keypair, Role
from opal.consent import revoke_request
from opal.crypto import sign

people, rows = survey(120)
node, authority, vetter = provider(k_min=5)
snap = load(node, rows)
rules = everyone_opts_in(authority, people, snap.dataset_id)
template = vetted(node, vetter, "AGG count() AS n, mean(monthly_spend) AS avg", snap)


def ask(querier):
    token = authority.issue_token(querier.principal, template.algorithm_id, snap.dataset_id, ttl=600)
    return node.handle_contract(Contract.create(querier, template.algorithm_id, node.repository_id, {}, [token]))


alice_analyst = Keypair.generate(Role.QUERIER)
print("before:", ask(alice_analyst).result.rows[0].values)

# the subject signs the revocation; nobody else can withdraw their consent
leaver = people[0]
rule_id = rules[leaver.principal.key_fingerprint].rule_id
authority.revoke_rule(rule_id, sign(revoke_request(rule_id), leaver), leaver.public_key)

# a second analyst asks straight away: one person fewer
bob_analyst = Keypair.generate(Role.QUERIER)
print("after (new querier):", ask(bob_analyst).result.rows[0].values)

# the first analyst asking again would learn exactly one person's data by
# subtraction, so the differencing guard refuses
again = ask(alice_analyst)
print("after (same querier):", again.status.value, again.decline_reason.value)
