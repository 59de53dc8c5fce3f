"""Sealed-box public-key envelopes.

Every actor owns an X25519 key pair and addresses confidential payloads by
sealing them to the recipient's public part. There is no session-key
agreement anywhere in the system; a box is a self-contained envelope that
only the holder of the matching secret part can open.

Sealing is deterministic on purpose: the ephemeral key is derived from the
recipient key and the payload, so identical inputs produce byte-identical
boxes and whole simulation transcripts can be compared byte for byte.
That trades away semantic security for reproducibility, which is fine
here because the envelope only has to be opaque and integrity-checked,
not resistant to cryptanalysis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import Corrupt, WrongRecipient

_KEY_DOMAIN = b"anoncloud.keypair.v1"
_EPH_DOMAIN = b"anoncloud.ephemeral.v1"
_BOX_DOMAIN = b"anoncloud.box.v1"
_NONCE_DOMAIN = b"anoncloud.nonce.v1"


@dataclass(frozen=True)
class PublicPart:
    """The shareable half of a key pair."""

    key_id: str
    raw: bytes


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    public_part: PublicPart
    secret_part: bytes


@dataclass(frozen=True)
class SealedBox:
    """An encrypted envelope addressed to exactly one key pair.

    recipient_key_id travels in the clear so the holder can recognise
    its mail; the body is an ephemeral public key followed by an
    AES-GCM ciphertext bound to the recipient id.
    """

    recipient_key_id: str
    body: bytes


def _seed_bytes(seed: int | str | bytes) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        return str(seed).encode()
    return seed.encode()


def _key_id(pub_raw: bytes) -> str:
    return "key:" + hashlib.sha256(_KEY_DOMAIN + pub_raw).hexdigest()[:16]


def generate_keypair(seed: int | str | bytes) -> KeyPair:
    """Derive a key pair deterministically from a seed.

    Distinct seeds give distinct key ids; the same seed always yields
    the same pair, which is what makes whole runs replayable.
    """
    priv_raw = hashlib.sha256(_KEY_DOMAIN + _seed_bytes(seed)).digest()
    priv = X25519PrivateKey.from_private_bytes(priv_raw)
    pub_raw = priv.public_key().public_bytes_raw()
    kid = _key_id(pub_raw)
    return KeyPair(
        key_id=kid,
        public_part=PublicPart(key_id=kid, raw=pub_raw),
        secret_part=priv_raw,
    )


def _derive_box_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return hashlib.sha256(_BOX_DOMAIN + shared + eph_pub + recipient_pub).digest()


def _derive_nonce(eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return hashlib.sha256(_NONCE_DOMAIN + eph_pub + recipient_pub).digest()[:12]


def seal(payload: bytes, recipient: PublicPart) -> SealedBox:
    """Seal a payload so only the matching key pair can open it."""
    if not payload:
        raise ValueError("cannot seal an empty payload")
    eph_raw = hashlib.sha256(_EPH_DOMAIN + recipient.raw + payload).digest()
    eph_priv = X25519PrivateKey.from_private_bytes(eph_raw)
    eph_pub = eph_priv.public_key().public_bytes_raw()
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient.raw))
    key = _derive_box_key(shared, eph_pub, recipient.raw)
    nonce = _derive_nonce(eph_pub, recipient.raw)
    ct = AESGCM(key).encrypt(nonce, payload, recipient.key_id.encode())
    return SealedBox(recipient_key_id=recipient.key_id, body=eph_pub + ct)


def open_box(box: SealedBox, kp: KeyPair) -> bytes:
    """Open a sealed box with the recipient's key pair.

    Raises WrongRecipient when the box was addressed to some other key,
    Corrupt when the body is malformed or fails its integrity tag.
    """
    if box.recipient_key_id != kp.key_id:
        raise WrongRecipient(
            f"box addressed to {box.recipient_key_id}, not {kp.key_id}"
        )
    if len(box.body) < 32 + 16:
        raise Corrupt("sealed box body is too short")
    eph_pub = box.body[:32]
    ct = box.body[32:]
    priv = X25519PrivateKey.from_private_bytes(kp.secret_part)
    my_pub = priv.public_key().public_bytes_raw()
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _derive_box_key(shared, eph_pub, my_pub)
        nonce = _derive_nonce(eph_pub, my_pub)
        return AESGCM(key).decrypt(nonce, ct, kp.key_id.encode())
    except (InvalidTag, ValueError) as exc:
        raise Corrupt("sealed box failed integrity check") from exc
