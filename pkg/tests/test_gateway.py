import dataclasses
import random
import uuid

from helpers import Federation
from opal.canonical import digest, to_wire
from opal.crypto import Keypair, Role
from opal.gateway import FederatedResponse, Gateway, Member, MembershipRegistry
from opal.protocol import Contract, DeclineReason
from opal.transport import LocalTransport


def test_routing_matches_registry_scan():
    rng = random.Random(3)
    members = []
    for i in range(12):
        key = Keypair.generate(Role.DATA_PROVIDER)
        repos = tuple(uuid.uuid4() for _ in range(rng.randint(1, 3)))
        members.append(Member(key.public_key, f"http://m{i}", repos, tuple(rng.sample(["a", "b", "c"], rng.randint(0, 2)))))
    gw = Gateway(Keypair.generate(Role.GATEWAY), MembershipRegistry(members))
    q = Keypair.generate(Role.QUERIER)
    for domain in ["a", "b", "c", "zzz"]:
        c = Contract.create(q, uuid.uuid4(), None, target_domain=domain)
        assert gw.route(c) == [m for m in members if domain in m.domains]
    for m in members:
        repo = rng.choice(m.repository_ids)
        assert gw.route(Contract.create(q, uuid.uuid4(), repo)) == [m]
    assert gw.route(Contract.create(q, uuid.uuid4(), uuid.uuid4())) == []


def test_broadcast_collects_every_member():
    fed = Federation(holds=[True, True, False])
    package = fed.gateway.submit(fed.broadcast())
    assert package.verify(fed.gateway_key.public_key)
    reasons = sorted(r.decline_reason.value if r.decline_reason else "ok" for r in package.member_responses)
    assert reasons == ["data-unavailable", "ok", "ok"]
    keys = {w.provider_key.principal: w.provider_key.public_key for w in fed.worlds}
    assert all(r.verify_signature(keys[r.provider]) for r in package.member_responses)


def test_gateway_passes_responses_through_unchanged():
    fed = Federation(n=1)
    contract = fed.broadcast()
    package = fed.gateway.submit(contract)
    direct = fed.worlds[0].node.audit.records()[-1]
    (inner,) = package.member_responses
    assert digest(inner.to_dict()) == direct.payload_digest


def test_unverifiable_member_response_replaced():
    fed = Federation(n=2)
    package = fed.gateway.submit(fed.broadcast())
    good, other = package.member_responses
    forged = dataclasses.replace(good, validity_duration=good.validity_duration + 1)
    repackaged = fed.gateway.collate([forged, other], package.contract_ids)
    replaced = repackaged.member_responses[0]
    assert replaced.decline_reason is DeclineReason.INVALID_CONTRACT
    assert replaced.provider == fed.gateway_key.principal and replaced.regarding == good.provider
    assert repackaged.member_responses[1] == other


def test_slow_member_times_out():
    fed = Federation(n=2)
    slow = fed.worlds[1]
    fed.gateway.timeout = 0.3
    fed.gateway._transports[slow.provider_key.principal.key_fingerprint] = LocalTransport(slow.node, delay=2.0)
    package = fed.gateway.submit(fed.broadcast())
    by_regarding = {r.regarding or r.provider: r for r in package.member_responses}
    assert by_regarding[slow.provider_key.principal].decline_reason is DeclineReason.DATA_UNAVAILABLE
    assert by_regarding[fed.worlds[0].provider_key.principal].fulfilled


def test_bad_querier_signature_declined_without_fanout():
    fed = Federation(n=2)
    c = fed.broadcast()
    tampered = dataclasses.replace(c, target_domain="health", parameter_bindings={"x": 1})
    package = fed.gateway.submit(tampered)
    (only,) = package.member_responses
    assert only.decline_reason is DeclineReason.INVALID_CONTRACT
    assert all(len(w.node.audit) == 0 for w in fed.worlds)


def test_allow_list():
    fed = Federation(n=1)
    fed.gateway.allowed_queriers = {"0" * 64}
    (only,) = fed.gateway.submit(fed.broadcast()).member_responses
    assert only.decline_reason is DeclineReason.INVALID_CONTRACT


def test_http_surface_and_package_roundtrip():
    fed = Federation(n=2)
    status, body = LocalTransport(fed.gateway).request("POST", "/contracts", fed.broadcast().to_dict())
    package = FederatedResponse.from_dict(body)
    assert status == 200 and package.verify(fed.gateway_key.public_key)
    assert to_wire(package.to_dict()) == to_wire(body)
    status, listing = LocalTransport(fed.gateway).request("GET", "/templates")
    assert len(listing["templates"]) == 2
