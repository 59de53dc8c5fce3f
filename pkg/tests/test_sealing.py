import pytest
from hypothesis import given, strategies as st

from anoncloud.errors import Corrupt, WrongRecipient
from anoncloud.sealing import SealedBox, generate_keypair, open_box, seal


def test_roundtrip():
    kp = generate_keypair("seal-roundtrip")
    box = seal(b"hello there", kp.public_part)
    assert open_box(box, kp) == b"hello there"


def test_seal_is_deterministic():
    kp = generate_keypair("seal-det")
    a = seal(b"same payload", kp.public_part)
    b = seal(b"same payload", kp.public_part)
    assert a.body == b.body
    assert a.recipient_key_id == b.recipient_key_id


def test_different_payloads_differ():
    kp = generate_keypair("seal-differ")
    a = seal(b"payload one", kp.public_part)
    b = seal(b"payload two", kp.public_part)
    assert a.body != b.body


def test_wrong_recipient_rejected_before_decryption():
    kp = generate_keypair("seal-right")
    other = generate_keypair("seal-wrong")
    box = seal(b"secret", kp.public_part)
    with pytest.raises(WrongRecipient):
        open_box(box, other)


def test_tampered_body_is_corrupt():
    kp = generate_keypair("seal-tamper")
    box = seal(b"secret", kp.public_part)
    flipped = bytearray(box.body)
    flipped[-1] ^= 0xFF
    with pytest.raises(Corrupt):
        open_box(SealedBox(box.recipient_key_id, bytes(flipped)), kp)


def test_truncated_body_is_corrupt():
    kp = generate_keypair("seal-trunc")
    box = seal(b"secret", kp.public_part)
    with pytest.raises(Corrupt):
        open_box(SealedBox(box.recipient_key_id, box.body[:20]), kp)


def test_empty_payload_rejected():
    kp = generate_keypair("seal-empty")
    with pytest.raises(ValueError):
        seal(b"", kp.public_part)


def test_keypair_is_seed_stable():
    a = generate_keypair("stable-seed")
    b = generate_keypair("stable-seed")
    assert a.key_id == b.key_id
    assert a.public_part.raw == b.public_part.raw


def test_distinct_seeds_distinct_keys():
    seen = {generate_keypair(f"k{i}").key_id for i in range(50)}
    assert len(seen) == 50


def test_seed_types_accepted():
    for seed in (7, "seven", b"seven"):
        kp = generate_keypair(seed)
        assert kp.key_id.startswith("key:")


@given(st.binary(min_size=1, max_size=2048))
def test_roundtrip_any_payload(payload):
    kp = generate_keypair("hyp-roundtrip")
    assert open_box(seal(payload, kp.public_part), kp) == payload
