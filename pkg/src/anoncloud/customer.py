"""Customer actor.

A customer talks to the manager to buy service, then talks to the
compute circuit only through onions. Each session gets a fresh reply
keypair: the service grant, the bill, and the final result are all
sealed to it, and the reply-block onion the customer pre-builds for the
result terminates at the customer itself.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .directory import hops_from_wire
from .errors import Corrupt, WrongRecipient
from .onion import NextHop, Terminal, peel, wrap_onion
from .sealing import KeyPair, PublicPart, SealedBox, generate_keypair, open_box, seal
from .simnet import Context, Envelope
from .wire import RelayMsg, decode_message, encode_message, onion_to_wire

MODE_POSTPAID = "postpaid"
MODE_PREPAID = "prepaid"


@dataclass
class CustomerSession:
    session_id: str | None
    service_number: int
    job_expr: str
    reply_keypair: KeyPair
    token_id: str | None = None
    route: list | None = None
    state: str = "requested"
    result: object = None
    result_tick: int | None = None
    bill: dict | None = None
    paid_tick: int | None = None
    acked: bool = False
    flow_id: str | None = None
    history: list[str] = field(default_factory=lambda: ["requested"])

    def transition(self, new: str) -> None:
        self.state = new
        self.history.append(new)


class Customer:
    def __init__(
        self,
        name: str,
        account_id: str,
        keyseed: bytes,
        manager_key: PublicPart,
        bank_key: PublicPart,
        rng: random.Random,
        payment_mode: str = MODE_POSTPAID,
        manager_alias: str = "manager",
        bank_alias: str = "bank",
    ):
        self.name = name
        self.account_id = account_id
        self.keyseed = keyseed
        self.manager_key = manager_key
        self.bank_key = bank_key
        self.rng = rng
        self.payment_mode = payment_mode
        self.manager_alias = manager_alias
        self.bank_alias = bank_alias
        self.sessions: list[CustomerSession] = []
        self._counter = 0

    def _fresh(self, prefix: str) -> str:
        return f"{prefix}:{self.rng.getrandbits(64):016x}"

    def start_session(self, ctx: Context, service_number: int, job_expr: str) -> CustomerSession:
        self._counter += 1
        reply_kp = generate_keypair(
            self.keyseed + b"/session/" + str(self._counter).encode()
        )
        session = CustomerSession(
            session_id=None,
            service_number=service_number,
            job_expr=job_expr,
            reply_keypair=reply_kp,
        )
        self.sessions.append(session)
        ctx.register_secret("job_payload", job_expr, session=None)
        request = {
            "kind": "service_request",
            "account": self.account_id,
            "service": service_number,
            "reply_key_id": reply_kp.public_part.key_id,
            "reply_key": reply_kp.public_part.raw.hex(),
        }
        ctx.send(
            self.manager_alias,
            seal(encode_message(request), self.manager_key),
            session=None,
        )
        return session

    # ---- handlers ---------------------------------------------------------

    def handle(self, env: Envelope, ctx: Context) -> None:
        if isinstance(env.body, SealedBox):
            self._handle_sealed(env, ctx)
        elif isinstance(env.body, RelayMsg):
            self._handle_relay(env, ctx)

    def _open_with_session_key(self, box: SealedBox) -> tuple[CustomerSession, dict] | None:
        for session in self.sessions:
            if session.reply_keypair.public_part.key_id != box.recipient_key_id:
                continue
            try:
                return session, decode_message(open_box(box, session.reply_keypair))
            except (WrongRecipient, Corrupt):
                return None
        return None

    def _handle_sealed(self, env: Envelope, ctx: Context) -> None:
        opened = self._open_with_session_key(env.body)
        if opened is None:
            return
        session, msg = opened
        if session.session_id is None and env.session_id is not None:
            session.session_id = env.session_id
        kind = msg.get("kind")
        if kind == "service_grant":
            self._on_grant(session, msg, env, ctx)
        elif kind == "bill":
            session.bill = msg
            session.transition("billed")
            self._maybe_settle(session, ctx)
        elif kind == "error":
            session.transition("failed")

    def _on_grant(self, session: CustomerSession, msg: dict, env: Envelope, ctx: Context) -> None:
        session.session_id = env.session_id or msg.get("session")
        session.token_id = msg["token"]
        hops = hops_from_wire(msg["route"])
        session.route = hops
        session.transition("granted")

        flow = self._fresh("flow")
        session.flow_id = flow
        sn_hops, mn_hop = hops[:-1], hops[-1]
        # Reply block: back down the circuit and home to this customer.
        reply_route = [(h.pseudonym, h.public_key) for h in reversed(sn_hops)]
        reply_route.append((self.name, session.reply_keypair.public_part))
        reply_block = wrap_onion(
            encode_message({"kind": "reply_home", "flow": flow}), reply_route
        )
        core = {
            "kind": "job",
            "token": session.token_id,
            "flow": flow,
            "expr": session.job_expr,
            "result_key_id": session.reply_keypair.public_part.key_id,
            "result_key": session.reply_keypair.public_part.raw.hex(),
            "reply": onion_to_wire(reply_block),
            "reply_first_hop": reply_route[0][0],
        }
        forward_route = [(h.pseudonym, h.public_key) for h in hops]
        packet = wrap_onion(encode_message(core), forward_route)
        session.transition("working")
        ctx.send(
            forward_route[0][0],
            RelayMsg(flow_id=flow, onion=packet),
            session=session.session_id,
        )

    def _handle_relay(self, env: Envelope, ctx: Context) -> None:
        for session in self.sessions:
            try:
                instruction, inner = peel(env.body.onion, session.reply_keypair)
            except (WrongRecipient, Corrupt):
                continue
            if isinstance(instruction, NextHop) or not isinstance(instruction, Terminal):
                return
            core = decode_message(inner)
            if core.get("kind") != "reply_home" or env.body.attachment is None:
                return
            try:
                result = decode_message(
                    open_box(env.body.attachment, session.reply_keypair)
                )
            except (WrongRecipient, Corrupt):
                return
            if result.get("kind") == "result":
                session.result = result.get("value")
                session.result_tick = ctx.tick
                session.transition("result_received")
                self._maybe_settle(session, ctx)
            return

    def _maybe_settle(self, session: CustomerSession, ctx: Context) -> None:
        """Pay once the required pieces are in hand.

        Postpaid waits for both the result and the bill, then sends the
        manager an acknowledgement and the bank the payment. Prepaid pays
        the moment the bill arrives; the result comes later.
        """
        if session.bill is None or session.paid_tick is not None:
            return
        if self.payment_mode == MODE_POSTPAID:
            if session.result_tick is None:
                return
            ack = {"kind": "ack", "token": session.token_id}
            ctx.send(
                self.manager_alias,
                seal(encode_message(ack), self.manager_key),
                session=session.session_id,
            )
            session.acked = True
        pay = {
            "kind": "pay",
            "payment_session": session.bill["payment_session"],
            "account": self.account_id,
        }
        ctx.send(
            self.bank_alias,
            seal(encode_message(pay), self.bank_key),
            session=session.session_id,
        )
        session.paid_tick = ctx.tick
        session.transition("paid")

    def audit_snapshot(self) -> dict:
        return {
            "account": self.account_id,
            "sessions": [
                {
                    "session": s.session_id,
                    "service": s.service_number,
                    "job": s.job_expr,
                    "state": s.state,
                    "history": list(s.history),
                    "result": s.result,
                    "result_tick": s.result_tick,
                    "paid_tick": s.paid_tick,
                    "token": s.token_id,
                }
                for s in self.sessions
            ],
        }
