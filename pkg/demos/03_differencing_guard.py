"""Two overlapping questions that would isolate one person.

"Everyone aged >= 18" and "everyone aged > 18" differ only by the people who
are exactly 18.  If that is a single person, subtracting the two sums gives
their spend away.  The guard compares cohorts, not query text.
"""
import numpy as np
from _world import everyone_opts_in, load, provider, survey, vetted

from opal import Contract, Keypair, Role

people, rows = survey(200, seed=3)
# everyone in the survey is 18+; make one person 17 so they are alone at the bottom
rows[42][2] = 17
ages = np.array([r[2] for r in rows])
youngest = int(ages.min())
print("people at the youngest age:", int((ages == youngest).sum()))

node, authority, vetter = provider(k_min=10)
snap = load(node, rows)
everyone_opts_in(authority, people, snap.dataset_id)
at_least = vetted(node, vetter, "PARAM a: integer FILTER age >= $a AGG count() AS n, sum(monthly_spend) AS total", snap)
above = vetted(node, vetter, "PARAM a: integer FILTER age > $a AGG count() AS n, sum(monthly_spend) AS total", snap)

mallory = Keypair.generate(Role.QUERIER)


def ask(template):
    token = authority.issue_token(mallory.principal, template.algorithm_id, snap.dataset_id, ttl=600)
    c = Contract.create(mallory, template.algorithm_id, node.repository_id, {"a": youngest}, [token])
    return node.handle_contract(c)


first = ask(at_least)
print("age >= youngest:", first.status.value, first.result.rows[0].values)
second = ask(above)
print("age >  youngest:", second.status.value, second.decline_reason.value)

# repeating the first question exactly is fine: nothing new is revealed
print("repeat:", ask(at_least).status.value)
