"""Canonical wire encoding for protocol messages and envelope bodies.

All sealed plaintexts are JSON objects with a "kind" field, encoded with
sorted keys and no whitespace so that sealing the same message twice
produces the same bytes. Envelope bodies come in three shapes:

    plain  - an unencrypted control dict (never carries secrets)
    sealed - a SealedBox addressed to one key pair
    relay  - an onion packet in flight, with an optional opaque
             sealed attachment riding alongside it

The relay attachment is how results travel: the packet routes, the
attachment stays sealed end to end, and intermediate hops forward both
without being able to read either.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

from .errors import SchemaError
from .onion import OnionPacket
from .sealing import SealedBox


def encode_message(msg: dict) -> bytes:
    return json.dumps(msg, sort_keys=True, separators=(",", ":")).encode()


def decode_message(raw: bytes) -> dict:
    return json.loads(raw.decode())


@dataclass(frozen=True)
class RelayMsg:
    """An onion in transit plus an optional sealed end-to-end attachment."""

    flow_id: str
    onion: OnionPacket
    attachment: SealedBox | None = None


Body = dict | SealedBox | RelayMsg


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode()


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode())


def box_to_wire(box: SealedBox) -> dict:
    return {"recipient": box.recipient_key_id, "body": _b64(box.body)}


def box_from_wire(data: dict) -> SealedBox:
    return SealedBox(recipient_key_id=data["recipient"], body=_unb64(data["body"]))


def onion_to_wire(packet: OnionPacket) -> dict:
    return {"layers": packet.layer_count, "outer": box_to_wire(packet.outer)}


def onion_from_wire(data: dict) -> OnionPacket:
    return OnionPacket(outer=box_from_wire(data["outer"]), layer_count=data["layers"])


def body_to_wire(body: Body) -> dict:
    if isinstance(body, dict):
        return {"t": "plain", "msg": body}
    if isinstance(body, SealedBox):
        return {"t": "sealed", "box": box_to_wire(body)}
    if isinstance(body, RelayMsg):
        att = box_to_wire(body.attachment) if body.attachment is not None else None
        return {
            "t": "relay",
            "flow": body.flow_id,
            "layers": body.onion.layer_count,
            "outer": box_to_wire(body.onion.outer),
            "attachment": att,
        }
    raise TypeError(f"unsupported body type {type(body).__name__}")


def body_from_wire(data: dict) -> Body:
    tag = data.get("t")
    if tag == "plain":
        return data["msg"]
    if tag == "sealed":
        return box_from_wire(data["box"])
    if tag == "relay":
        att = data.get("attachment")
        return RelayMsg(
            flow_id=data["flow"],
            onion=OnionPacket(
                outer=box_from_wire(data["outer"]), layer_count=data["layers"]
            ),
            attachment=box_from_wire(att) if att is not None else None,
        )
    raise SchemaError(f"unknown body tag {tag!r}")


def kind_of(body: Body) -> str:
    """The transcript-visible kind: plain kinds show, encrypted ones do not."""
    if isinstance(body, dict):
        return str(body.get("kind", "plain"))
    if isinstance(body, SealedBox):
        return "sealed"
    return "relay"


def body_size(body: Body) -> int:
    return len(encode_message(body_to_wire(body)))
