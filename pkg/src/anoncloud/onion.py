"""Layered onion wrapping and peeling over sealed boxes.

A packet is built inside-out for a route of (pseudonym, public key) hops:
the terminal layer carries the payload, every outer layer carries the next
hop's pseudonym and the sealed inner layer. Peeling one layer tells a hop
nothing beyond where to send the remainder.

Layer plaintexts use a fixed binary field order (marker, next-hop
pseudonym, inner length, inner body) so wrapping is canonical and
byte-identical across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .errors import Corrupt
from .sealing import KeyPair, PublicPart, SealedBox, open_box, seal

# Packets built for the customer-to-master-node channel must route through
# at least this many layers. Shorter onions are reserved for hops inside an
# already-established circuit.
MIN_PROTOCOL_LAYERS = 3

_MARKER_HOP = 0x01
_MARKER_TERMINAL = 0x00


@dataclass(frozen=True)
class NextHop:
    """Peel result pointing at the following hop's pseudonym."""

    pseudonym: str


class Terminal:
    """Sentinel peel result: this hop is the packet's destination."""

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return "Terminal"


TERMINAL = Terminal()


@dataclass(frozen=True)
class OnionPacket:
    outer: SealedBox
    layer_count: int


def _encode_layer(marker: int, pseudonym: str, inner: bytes) -> bytes:
    pseud = pseudonym.encode()
    return struct.pack(">BH", marker, len(pseud)) + pseud + struct.pack(">I", len(inner)) + inner


def _decode_layer(plain: bytes) -> tuple[int, str, bytes]:
    if len(plain) < 3:
        raise Corrupt("onion layer too short")
    marker, pseud_len = struct.unpack(">BH", plain[:3])
    rest = plain[3:]
    if len(rest) < pseud_len + 4:
        raise Corrupt("onion layer truncated")
    pseud = rest[:pseud_len].decode()
    (inner_len,) = struct.unpack(">I", rest[pseud_len : pseud_len + 4])
    inner = rest[pseud_len + 4 :]
    if len(inner) != inner_len:
        raise Corrupt("onion layer length mismatch")
    return marker, pseud, inner


def _box_bytes(box: SealedBox) -> bytes:
    rid = box.recipient_key_id.encode()
    return struct.pack(">H", len(rid)) + rid + box.body


def _box_from_bytes(raw: bytes) -> SealedBox:
    if len(raw) < 2:
        raise Corrupt("sealed box encoding too short")
    (rid_len,) = struct.unpack(">H", raw[:2])
    if len(raw) < 2 + rid_len:
        raise Corrupt("sealed box encoding truncated")
    rid = raw[2 : 2 + rid_len].decode()
    return SealedBox(recipient_key_id=rid, body=raw[2 + rid_len :])


def wrap_onion(payload: bytes, route: Sequence[tuple[str, PublicPart]]) -> OnionPacket:
    """Wrap a payload for delivery along a route.

    The route lists (pseudonym, public key) per hop, ending at the
    destination. Hop keys must be pairwise distinct; an empty route or
    payload is rejected.
    """
    if not route:
        raise ValueError("route must name at least one hop")
    if not payload:
        raise ValueError("cannot wrap an empty payload")
    key_ids = [key.key_id for _, key in route]
    if len(set(key_ids)) != len(key_ids):
        raise ValueError("route hop keys must be distinct")

    _, dest_key = route[-1]
    inner_box = seal(_encode_layer(_MARKER_TERMINAL, "", payload), dest_key)
    for i in range(len(route) - 2, -1, -1):
        next_pseud = route[i + 1][0]
        layer = _encode_layer(_MARKER_HOP, next_pseud, _box_bytes(inner_box))
        inner_box = seal(layer, route[i][1])
    return OnionPacket(outer=inner_box, layer_count=len(route))


def peel(packet: OnionPacket, kp: KeyPair) -> tuple[NextHop | Terminal, OnionPacket | bytes]:
    """Remove one layer with this hop's key pair.

    Returns (NextHop, inner packet) for a forwarding layer and
    (TERMINAL, payload bytes) at the destination. WrongRecipient and
    Corrupt propagate from the sealed-box layer.
    """
    plain = open_box(packet.outer, kp)
    marker, pseud, inner = _decode_layer(plain)
    if marker == _MARKER_TERMINAL:
        return TERMINAL, inner
    if marker == _MARKER_HOP:
        return NextHop(pseudonym=pseud), OnionPacket(
            outer=_box_from_bytes(inner), layer_count=packet.layer_count - 1
        )
    raise Corrupt(f"unknown layer marker {marker}")
