import dataclasses
import uuid

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opal.crypto import (
    Keypair,
    PrincipalId,
    Role,
    SignatureEnvelope,
    SigningError,
    UnknownSchemeError,
    fingerprint,
    sign,
    verify,
    verify_embedded,
)

KEY = Keypair.from_seed(Role.QUERIER, b"\x01" * 32)
OTHER = Keypair.from_seed(Role.QUERIER, b"\x02" * 32)


@given(st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=6))
@settings(max_examples=100)
def test_sign_verify_roundtrip(doc):
    env = sign(doc, KEY)
    assert verify(doc, env, KEY.public_key)
    assert not verify(doc, env, OTHER.public_key)


def test_changed_document_fails():
    env = sign({"a": 1}, KEY)
    assert not verify({"a": 2}, env, KEY.public_key)


def test_envelope_roundtrips_through_dict():
    env = sign({"a": 1}, KEY)
    back = SignatureEnvelope.from_dict(env.to_dict())
    assert back == env and verify({"a": 1}, back, KEY.public_key)


def test_unknown_scheme_is_an_error_not_a_false():
    env = dataclasses.replace(sign({"a": 1}, KEY), scheme_label="rsa-pss-sha512")
    with pytest.raises(UnknownSchemeError):
        verify({"a": 1}, env, KEY.public_key)


def test_signer_mismatch_refused():
    with pytest.raises(SigningError):
        sign({"a": 1}, KEY, signer=OTHER.principal)


def test_embedded_key_swap_detected():
    env = sign({"a": 1}, KEY)
    forged = dataclasses.replace(env, public_key=OTHER.public_key)
    assert verify_embedded({"a": 1}, env)
    assert not verify_embedded({"a": 1}, forged)


def test_principal_validation():
    with pytest.raises(ValueError):
        PrincipalId(Role.QUERIER, "xyz")
    p = KEY.principal
    assert p.key_fingerprint == fingerprint(KEY.public_key)
    assert PrincipalId.from_dict(p.to_dict()) == p


def test_seeded_keys_are_deterministic():
    assert Keypair.from_seed(Role.GATEWAY, b"\x01" * 32).public_key == KEY.public_key


def test_save_and_load(tmp_path):
    key = Keypair.generate(Role.DATA_PROVIDER)
    key.save(tmp_path / str(uuid.uuid4()))
    loaded = Keypair.load(next(tmp_path.iterdir()))
    assert loaded.role is Role.DATA_PROVIDER and loaded.public_key == key.public_key
