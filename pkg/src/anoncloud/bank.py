"""Bank gateway: the e-payment counterparty.

The bank sees who pays (that is what banks do) but never any service
content. A payment session is opened by the manager bound to a token id
and an amount; the customer settles it; the bank then notifies the
manager with a payment reference. Those three values are exactly what
the manager is allowed to remember afterwards.
"""

from __future__ import annotations

import random

from .errors import Corrupt, WrongRecipient
from .sealing import KeyPair, PublicPart, SealedBox, open_box, seal
from .simnet import Context, Envelope
from .wire import decode_message, encode_message


class BankGateway:
    def __init__(self, keypair: KeyPair, manager_key: PublicPart, rng: random.Random,
                 manager_alias: str = "manager"):
        self.keypair = keypair
        self.manager_key = manager_key
        self.manager_alias = manager_alias
        self.rng = rng
        self.sessions: dict[str, dict] = {}
        self.audit: dict = {"payments": []}

    def handle(self, env: Envelope, ctx: Context) -> None:
        if not isinstance(env.body, SealedBox):
            return
        try:
            msg = decode_message(open_box(env.body, self.keypair))
        except (WrongRecipient, Corrupt):
            return
        kind = msg.get("kind")
        if kind == "open_payment":
            self.sessions[msg["payment_session"]] = {
                "token": msg["token"],
                "amount": msg["amount"],
                "state": "open",
                "session_tag": env.session_id,
            }
        elif kind == "pay":
            self._on_pay(env, msg, ctx)

    def _on_pay(self, env: Envelope, msg: dict, ctx: Context) -> None:
        handle = msg.get("payment_session")
        session = self.sessions.get(handle)
        if session is None or session["state"] != "open":
            ctx.send(env.frm, {"kind": "error", "code": "UnknownPayment"})
            return
        session["state"] = "paid"
        reference = f"payref:{self.rng.getrandbits(64):016x}"
        session["reference"] = reference
        ctx.register_secret(
            "payment_reference", reference, session=session["session_tag"]
        )
        self.audit["payments"].append(
            {
                "payment_session": handle,
                "token": session["token"],
                "amount": session["amount"],
                "reference": reference,
                "payer_account": msg.get("account"),
                "session": session["session_tag"],
                "tick": ctx.tick,
            }
        )
        notice = {
            "kind": "payment_notice",
            "payment_session": handle,
            "payment_reference": reference,
            "token": session["token"],
            "amount": session["amount"],
        }
        ctx.send(
            self.manager_alias,
            seal(encode_message(notice), self.manager_key),
            session=session["session_tag"],
        )

    def audit_snapshot(self) -> dict:
        return {"payments": list(self.audit["payments"])}
