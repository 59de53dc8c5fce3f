"""Manager plane: service catalog, tokens, per-session agents, billing.

The manager is the only public-facing principal. It sells single-use
tokens, spawns one agent process per session, relays authentication to
the master node, bills the customer, and hands payment off to the bank
gateway. When a session closes, the agent is killed and its working
state erased; the only thing the manager retains is one BillingRecord
per paid session, and that record carries payment metadata only.

Two payment modes exist. postpaid (the default) bills after the service
completes and tears the agent down on payment. prepaid bills up front,
unlocks the service on payment, and tears down on completion.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .directory import Circuit, hops_from_wire, hops_to_wire
from .errors import (
    Corrupt,
    DeadAgent,
    TokenReplay,
    UnknownPayment,
    UnknownService,
    WrongRecipient,
)
from .sealing import KeyPair, PublicPart, SealedBox, open_box, seal
from .simnet import Context, Envelope
from .wire import decode_message, encode_message

MODE_POSTPAID = "postpaid"
MODE_PREPAID = "prepaid"


@dataclass(frozen=True)
class ServiceEntry:
    service_number: int
    kind: str
    unit_price: int


class ServiceCatalog:
    def __init__(self, entries: list[ServiceEntry]):
        self._entries = {e.service_number: e for e in entries}

    def __contains__(self, service_number: int) -> bool:
        return service_number in self._entries

    def unit_price(self, service_number: int) -> int:
        if service_number not in self._entries:
            raise UnknownService(f"service {service_number} not in catalog")
        return self._entries[service_number].unit_price

    def entries(self) -> list[ServiceEntry]:
        return list(self._entries.values())


class TokenState(str, Enum):
    ISSUED = "Issued"
    REDEEMED = "Redeemed"
    EXPIRED = "Expired"


@dataclass
class Token:
    token_id: str
    service_number: int
    state: TokenState = TokenState.ISSUED


class AgentState(str, Enum):
    PREPARING = "Preparing"
    SERVING = "Serving"
    AWAITING_PAYMENT = "AwaitingPayment"
    KILLED = "Killed"


@dataclass
class AgentProcess:
    """One short-lived process per customer session.

    working_state holds everything session-scoped (customer identity,
    reply key, route, bill). It is erased at kill time; after that the
    agent is just a tombstone with a state history.
    """

    process_id: str
    session_id: str
    state: AgentState = AgentState.PREPARING
    working_state: dict | None = field(default_factory=dict)
    history: list[str] = field(default_factory=list)
    kill_tick: int | None = None

    def __post_init__(self) -> None:
        if not self.history:
            self.history.append(self.state.value)

    def transition(self, new: AgentState) -> None:
        self.state = new
        self.history.append(new.value)

    def working(self) -> dict:
        if self.state is AgentState.KILLED or self.working_state is None:
            raise DeadAgent(f"agent {self.process_id} is killed")
        return self.working_state


@dataclass(frozen=True)
class BillingRecord:
    """The only thing the manager keeps after teardown. Four fields, ever."""

    token_id: str
    amount: int
    payment_reference: str
    tick: int


@dataclass(frozen=True)
class BillLine:
    service_number: int
    quantity: int
    unit_price: int


@dataclass(frozen=True)
class Bill:
    session_id: str
    lines: tuple[BillLine, ...]
    total: int


class Manager:
    def __init__(
        self,
        keypair: KeyPair,
        catalog: ServiceCatalog,
        rng: random.Random,
        payment_mode: str = MODE_POSTPAID,
        circuit_length: int = 3,
        ds_alias: str = "directory",
        ds_key: PublicPart | None = None,
        mn_key: PublicPart | None = None,
        bank_alias: str = "bank",
        bank_key: PublicPart | None = None,
    ):
        if payment_mode not in (MODE_POSTPAID, MODE_PREPAID):
            raise ValueError(f"unknown payment mode {payment_mode!r}")
        self.keypair = keypair
        self.catalog = catalog
        self.rng = rng
        self.payment_mode = payment_mode
        self.circuit_length = circuit_length
        self.ds_alias = ds_alias
        self.ds_key = ds_key
        self.mn_key = mn_key
        self.bank_alias = bank_alias
        self.bank_key = bank_key

        self.tokens: dict[str, Token] = {}
        self.agents: dict[str, AgentProcess] = {}
        self.billing_records: list[BillingRecord] = []
        self._by_token: dict[str, str] = {}
        self._by_payment: dict[str, str] = {}
        self._by_circuit_ref: dict[str, str] = {}
        self.audit: dict = {"bills": [], "last_auth": None, "acks": [], "errors": []}

    # ---- id helpers ----------------------------------------------------

    def _fresh(self, prefix: str) -> str:
        return f"{prefix}:{self.rng.getrandbits(64):016x}"

    def _agent_for_token(self, token_id: str) -> AgentProcess:
        pid = self._by_token.get(token_id)
        if pid is None:
            raise UnknownPayment(f"no session for token {token_id}")
        return self.agents[pid]

    # ---- protocol operations -------------------------------------------

    def handle_service_request(self, box: SealedBox) -> tuple[Token, str]:
        """Open a customer's sealed request and set the session up.

        Issues a fresh single-use token, spawns the agent in Preparing,
        and stashes the reply key and customer alias in working state.
        """
        msg = decode_message(open_box(box, self.keypair))
        service = msg.get("service")
        if service not in self.catalog:
            raise UnknownService(f"service {service!r} not in catalog")
        token = Token(token_id=self._fresh("tok"), service_number=service)
        pid = self._fresh("proc")
        sid = self._fresh("sess")
        agent = AgentProcess(process_id=pid, session_id=sid)
        agent.working_state = {
            "account": msg.get("account"),
            "service": service,
            "reply_key": PublicPart(
                key_id=msg["reply_key_id"], raw=bytes.fromhex(msg["reply_key"])
            ),
            "customer_alias": None,
            "token_id": token.token_id,
            "circuit": None,
            "bill": None,
            "payment_session": None,
        }
        self.tokens[token.token_id] = token
        self.agents[pid] = agent
        self._by_token[token.token_id] = pid
        return token, pid

    def forward_to_mn(
        self,
        agent: AgentProcess,
        token: Token,
        request: dict,
        mn_key: PublicPart,
    ) -> SealedBox:
        """Seal the authentication message for the master node.

        The plaintext names the token, the service number, and the
        circuit to serve on. No customer identity crosses this link.
        """
        if agent.state is AgentState.KILLED:
            raise DeadAgent(f"agent {agent.process_id} is killed")
        if token.state is not TokenState.ISSUED:
            raise TokenReplay(f"token {token.token_id} is {token.state.value}")
        payload = {
            "kind": "auth",
            "token": token.token_id,
            "service": token.service_number,
            **request,
        }
        box = seal(encode_message(payload), mn_key)
        if agent.state is AgentState.PREPARING:
            agent.transition(AgentState.SERVING)
        return box

    def compute_bill(
        self, completed: list[tuple[int, int]], session_id: str = ""
    ) -> Bill:
        lines = []
        total = 0
        for service_number, quantity in completed:
            price = self.catalog.unit_price(service_number)
            lines.append(
                BillLine(
                    service_number=service_number,
                    quantity=quantity,
                    unit_price=price,
                )
            )
            total += quantity * price
        return Bill(session_id=session_id, lines=tuple(lines), total=total)

    def redirect_to_bank(self, bill: Bill, agent: AgentProcess) -> str:
        """Open a payment session handle bound to token id and amount only."""
        expected = (
            AgentState.AWAITING_PAYMENT
            if self.payment_mode == MODE_POSTPAID
            else AgentState.PREPARING
        )
        if agent.state is not expected:
            raise DeadAgent(
                f"agent {agent.process_id} is {agent.state.value}, "
                f"expected {expected.value} for {self.payment_mode} redirect"
            )
        handle = self._fresh("payses")
        self._by_payment[handle] = agent.process_id
        agent.working()["payment_session"] = handle
        return handle

    def on_payment_notification(self, msg: dict, tick: int) -> AgentProcess:
        """Record the payment and either tear down (postpaid) or unlock.

        Exactly one BillingRecord is persisted per paid session; it holds
        the token id, the amount, the bank's payment reference, and the
        tick. Everything else about the session dies with the agent.
        """
        handle = msg.get("payment_session")
        pid = self._by_payment.get(handle)
        if pid is None:
            raise UnknownPayment(f"no open payment session {handle!r}")
        agent = self.agents[pid]
        record = BillingRecord(
            token_id=msg["token"],
            amount=msg["amount"],
            payment_reference=msg["payment_reference"],
            tick=tick,
        )
        self.billing_records.append(record)
        del self._by_payment[handle]
        if self.payment_mode == MODE_POSTPAID:
            self._kill(agent, tick)
        return agent

    def _kill(self, agent: AgentProcess, tick: int) -> None:
        agent.working_state = None
        agent.kill_tick = tick
        agent.transition(AgentState.KILLED)

    # ---- simulation handler ---------------------------------------------

    def handle(self, env: Envelope, ctx: Context) -> None:
        if not isinstance(env.body, SealedBox):
            return
        try:
            msg = decode_message(open_box(env.body, self.keypair))
        except (WrongRecipient, Corrupt):
            self.audit["errors"].append("undecryptable envelope")
            return
        kind = msg.get("kind")
        if kind == "service_request":
            self._on_service_request(env, msg, ctx)
        elif kind == "circuit":
            self._on_circuit(msg, ctx)
        elif kind == "auth_ok":
            token = self.tokens.get(msg.get("token"))
            if token is not None and token.state is TokenState.ISSUED:
                token.state = TokenState.REDEEMED
        elif kind == "service_done":
            self._on_service_done(msg, ctx)
        elif kind == "service_failed":
            self._on_service_failed(msg, ctx)
        elif kind == "ack":
            self.audit["acks"].append(msg.get("token"))
        elif kind == "payment_notice":
            self._on_payment_notice(msg, ctx)
        elif kind == "error":
            self.audit["errors"].append({"code": msg.get("code"), "token": msg.get("token")})
        elif kind == "directory_update":
            pass

    def _reply_key_of(self, agent: AgentProcess) -> PublicPart:
        return agent.working()["reply_key"]

    def _on_service_request(self, env: Envelope, msg: dict, ctx: Context) -> None:
        try:
            token, pid = self.handle_service_request(env.body)
        except UnknownService:
            # Without a valid request there is no session; answer in the
            # clear that the service number is unknown, naming no secrets.
            ctx.send(env.frm, {"kind": "error", "code": "UnknownService"})
            return
        agent = self.agents[pid]
        agent.working()["customer_alias"] = env.frm
        sid = agent.session_id
        ctx.register_secret("token", token.token_id, session=sid)
        if self.payment_mode == MODE_PREPAID:
            self._bill_and_redirect(agent, [(token.service_number, 1)], ctx)
        else:
            self._request_circuit(agent, ctx)

    def _request_circuit(self, agent: AgentProcess, ctx: Context) -> None:
        ref = self._fresh("creq")
        self._by_circuit_ref[ref] = agent.process_id
        req = {
            "kind": "circuit_request",
            "ref": ref,
            "length": self.circuit_length,
            "service_kind": "compute",
        }
        ctx.send(
            self.ds_alias,
            seal(encode_message(req), self.ds_key),
            session=agent.session_id,
        )

    def _on_circuit(self, msg: dict, ctx: Context) -> None:
        pid = self._by_circuit_ref.pop(msg["ref"], None)
        if pid is None:
            return
        agent = self.agents[pid]
        work = agent.working()
        circuit = Circuit(
            circuit_id=msg["circuit_id"],
            hops=hops_from_wire(msg["hops"]),
            epoch=msg["epoch"],
        )
        work["circuit"] = circuit
        token = self.tokens[work["token_id"]]
        auth_box = self.forward_to_mn(
            agent, token, {"circuit_id": circuit.circuit_id}, self.mn_key
        )
        mn_alias = circuit.mn_hop.pseudonym
        self.audit["last_auth"] = {"to": mn_alias, "box": auth_box}
        ctx.send(mn_alias, auth_box, session=agent.session_id)
        grant = {
            "kind": "service_grant",
            "token": token.token_id,
            "process": agent.process_id,
            "session": agent.session_id,
            "route": hops_to_wire(circuit),
        }
        ctx.send(
            work["customer_alias"],
            seal(encode_message(grant), self._reply_key_of(agent)),
            session=agent.session_id,
        )

    def _bill_and_redirect(
        self, agent: AgentProcess, completed: list[tuple[int, int]], ctx: Context
    ) -> None:
        work = agent.working()
        bill = self.compute_bill(completed, session_id=agent.session_id)
        work["bill"] = bill
        self.audit["bills"].append(
            {
                "session": agent.session_id,
                "lines": [[l.service_number, l.quantity, l.unit_price] for l in bill.lines],
                "total": bill.total,
            }
        )
        ctx.register_secret("amount", str(bill.total), session=agent.session_id)
        handle = self.redirect_to_bank(bill, agent)
        open_payment = {
            "kind": "open_payment",
            "payment_session": handle,
            "token": work["token_id"],
            "amount": bill.total,
        }
        ctx.send(
            self.bank_alias,
            seal(encode_message(open_payment), self.bank_key),
            session=agent.session_id,
        )
        bill_msg = {
            "kind": "bill",
            "token": work["token_id"],
            "total": bill.total,
            "payment_session": handle,
            "bank": self.bank_alias,
        }
        ctx.send(
            work["customer_alias"],
            seal(encode_message(bill_msg), self._reply_key_of(agent)),
            session=agent.session_id,
        )

    def _on_service_done(self, msg: dict, ctx: Context) -> None:
        token_id = msg["token"]
        agent = self._agent_for_token(token_id)
        if agent.state is AgentState.KILLED:
            return
        completed = [(s, q) for s, q in msg["completed"]]
        if self.payment_mode == MODE_POSTPAID:
            agent.transition(AgentState.AWAITING_PAYMENT)
            self._bill_and_redirect(agent, completed, ctx)
        else:
            # prepaid customers already paid; completion closes the session
            self._kill(agent, ctx.tick)

    def _on_service_failed(self, msg: dict, ctx: Context) -> None:
        token_id = msg.get("token")
        token = self.tokens.get(token_id)
        if token is not None and token.state is TokenState.ISSUED:
            token.state = TokenState.EXPIRED
        agent = self._agent_for_token(token_id)
        self.audit["errors"].append(
            {"session": agent.session_id, "error": msg.get("error")}
        )
        if agent.state is not AgentState.KILLED:
            self._kill(agent, ctx.tick)

    def _on_payment_notice(self, msg: dict, ctx: Context) -> None:
        agent = self.on_payment_notification(msg, ctx.tick)
        if self.payment_mode == MODE_PREPAID and agent.state is not AgentState.KILLED:
            self._request_circuit(agent, ctx)

    # ---- snapshots for the transcript ------------------------------------

    def retained_store(self) -> dict:
        """What survives teardown: billing records and nothing session-scoped."""
        return {
            "billing_records": [
                {
                    "token_id": r.token_id,
                    "amount": r.amount,
                    "payment_reference": r.payment_reference,
                    "tick": r.tick,
                }
                for r in self.billing_records
            ]
        }

    def audit_snapshot(self) -> dict:
        """Instrumentation view for invariant checking; not manager state."""
        return {
            "agents": {
                a.process_id: {
                    "session": a.session_id,
                    "history": list(a.history),
                    "kill_tick": a.kill_tick,
                    "erased": a.working_state is None,
                }
                for a in self.agents.values()
            },
            "tokens": {t.token_id: t.state.value for t in self.tokens.values()},
            "bills": list(self.audit["bills"]),
            "acks": list(self.audit["acks"]),
            "errors": list(self.audit["errors"]),
        }
