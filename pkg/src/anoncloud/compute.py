"""Compute plane: the master node and the slave nodes.

The master node authenticates token-bearing sessions, breaks each job
into sub-services, pushes every sub-service through the circuit inside
an onion, and aggregates the results. Slave nodes do two things: relay
onion layers (both directions, they are bidirectional) and evaluate the
sub-services addressed to them.

Sub-results and final results ride as sealed attachments next to
reply-block onions that the dispatching side built in advance, so no
relay on the return path learns anything beyond its next hop.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .directory import Circuit, hops_from_wire
from .errors import (
    CapacityError,
    Corrupt,
    EvalError,
    NotReady,
    RoutingError,
    StaleCircuit,
    TokenReplay,
    WrongRecipient,
)
from .jobs import Job, evaluate, merge_results, parse_job, render_job, sub_jobs
from .onion import NextHop, OnionPacket, Terminal, peel, wrap_onion
from .sealing import KeyPair, PublicPart, SealedBox, open_box, seal
from .simnet import Context, Envelope
from .wire import (
    RelayMsg,
    decode_message,
    encode_message,
    onion_from_wire,
    onion_to_wire,
)


@dataclass(frozen=True)
class ServiceJob:
    service_number: int
    payload: str


@dataclass(frozen=True)
class SubService:
    parent_session: str
    index: int
    sub_payload: str
    assigned_pseudonym: str


class MnState(str, Enum):
    AUTHENTICATING = "Authenticating"
    DISPATCHING = "Dispatching"
    AGGREGATING = "Aggregating"
    DONE = "Done"


@dataclass
class MnSession:
    session_id: str
    token_id: str
    circuit: Circuit
    service_number: int
    state: MnState = MnState.AUTHENTICATING
    history: list[str] = field(default_factory=list)
    job: Job | None = None
    subs: list[SubService] = field(default_factory=list)
    sub_results: list = field(default_factory=list)
    serving: list[str] = field(default_factory=list)
    audit_tag: str | None = None
    done_tick: int | None = None
    # customer-provided return path, set when the job arrives
    result_key: PublicPart | None = None
    reply_onion: OnionPacket | None = None
    reply_first_hop: str | None = None
    job_flow: str | None = None

    def __post_init__(self) -> None:
        if not self.history:
            self.history.append(self.state.value)

    def transition(self, new: MnState) -> None:
        self.state = new
        self.history.append(new.value)


def sn_execute(sub: SubService) -> int | str:
    """Evaluate one sub-service payload. Malformed payloads raise EvalError."""
    job = parse_job(sub.sub_payload)
    return evaluate(job)


class SlaveNode:
    """Relay plus sub-service executor. Knows nothing beyond its own layer."""

    def __init__(self, keypair: KeyPair):
        self.keypair = keypair
        self.audit: dict = {"relayed": 0, "executed": [], "errors": []}

    def relay(self, packet: OnionPacket, resolver=None) -> tuple[str, OnionPacket]:
        """Peel one layer and name the forwarding target.

        resolver, when given, must confirm the next-hop pseudonym is
        currently routable; a miss raises RoutingError. Terminal layers
        are not this method's business and raise RoutingError too.
        """
        instruction, inner = peel(packet, self.keypair)
        if isinstance(instruction, Terminal):
            raise RoutingError("terminal layer reached a pure relay call")
        assert isinstance(instruction, NextHop)
        if resolver is not None and not resolver(instruction.pseudonym):
            raise RoutingError(
                f"next hop {instruction.pseudonym!r} is not routable"
            )
        assert isinstance(inner, OnionPacket)
        return instruction.pseudonym, inner

    def handle(self, env: Envelope, ctx: Context) -> None:
        if not isinstance(env.body, RelayMsg):
            return
        try:
            instruction, inner = peel(env.body.onion, self.keypair)
        except (WrongRecipient, Corrupt) as exc:
            self.audit["errors"].append(type(exc).__name__)
            return
        if isinstance(instruction, NextHop):
            if not ctx.can_route(instruction.pseudonym):
                self.audit["errors"].append("RoutingError")
                return
            self.audit["relayed"] += 1
            assert isinstance(inner, OnionPacket)
            ctx.send(
                instruction.pseudonym,
                RelayMsg(
                    flow_id=env.body.flow_id,
                    onion=inner,
                    attachment=env.body.attachment,
                ),
                session=env.session_id,
            )
            return
        core = decode_message(inner)
        if core.get("kind") == "subjob":
            self._execute_subjob(core, env, ctx)

    def _execute_subjob(self, core: dict, env: Envelope, ctx: Context) -> None:
        sub = SubService(
            parent_session=core.get("flow", ""),
            index=core.get("index", 0),
            sub_payload=core["expr"],
            assigned_pseudonym="",
        )
        try:
            value = sn_execute(sub)
            result = {"kind": "sub_result", "flow": core["flow"],
                      "index": core["index"], "ok": True, "value": value}
            self.audit["executed"].append(core["expr"])
        except EvalError as exc:
            result = {"kind": "sub_result", "flow": core["flow"],
                      "index": core["index"], "ok": False, "error": str(exc)}
            self.audit["errors"].append("EvalError")
        result_key = PublicPart(
            key_id=core["result_key_id"], raw=bytes.fromhex(core["result_key"])
        )
        attachment = seal(encode_message(result), result_key)
        ctx.send(
            core["reply_first_hop"],
            RelayMsg(
                flow_id=core["flow"],
                onion=onion_from_wire(core["reply"]),
                attachment=attachment,
            ),
            session=env.session_id,
        )

    def audit_snapshot(self) -> dict:
        return {
            "relayed": self.audit["relayed"],
            "executed": list(self.audit["executed"]),
            "errors": list(self.audit["errors"]),
        }


class MasterNode:
    def __init__(
        self,
        keypair: KeyPair,
        manager_key: PublicPart,
        rng: random.Random,
        manager_alias: str = "manager",
        faults: frozenset[str] = frozenset(),
    ):
        self.keypair = keypair
        self.manager_key = manager_key
        self.manager_alias = manager_alias
        self.rng = rng
        self.faults = faults
        self.current_epoch = 0
        self.circuits: dict[str, Circuit] = {}
        self.sessions: dict[str, MnSession] = {}
        self._by_token: dict[str, str] = {}
        self._redeemed: set[str] = set()
        self._flows: dict[str, tuple[str, int]] = {}
        self.audit: dict = {"errors": []}

    def _fresh(self, prefix: str) -> str:
        return f"{prefix}:{self.rng.getrandbits(64):016x}"

    # ---- protocol operations -------------------------------------------

    def authenticate(self, box: SealedBox, audit_tag: str | None = None) -> MnSession:
        """Open an authentication box and redeem its token.

        A token already seen here is a replay and is rejected unless the
        accept_replayed_tokens fault is active (which exists so the
        invariant checker can be shown to catch the violation).
        """
        msg = decode_message(open_box(box, self.keypair))
        token_id = msg["token"]
        if token_id in self._redeemed and "accept_replayed_tokens" not in self.faults:
            raise TokenReplay(f"token {token_id} already redeemed")
        circuit = self.circuits.get(msg.get("circuit_id"))
        if circuit is None:
            raise Corrupt(f"authentication names unknown circuit {msg.get('circuit_id')!r}")
        session = MnSession(
            session_id=self._fresh("mnses"),
            token_id=token_id,
            circuit=circuit,
            service_number=msg["service"],
            audit_tag=audit_tag,
        )
        self._redeemed.add(token_id)
        self.sessions[session.session_id] = session
        self._by_token[token_id] = session.session_id
        session.transition(MnState.DISPATCHING)
        return session

    def decompose(self, session: MnSession, n_parts: int) -> list[SubService]:
        """Split the session's job into sub-services, one per circuit SN slot.

        Assignment is round-robin over the circuit's slave hops in order.
        """
        if session.job is None:
            raise NotReady("session has no job to decompose")
        available = len(session.circuit.sn_hops)
        if n_parts < 1 or n_parts > available:
            raise CapacityError(
                f"n_parts {n_parts} outside 1..{available} circuit slave nodes"
            )
        parts = sub_jobs(session.job, n_parts)
        subs = [
            SubService(
                parent_session=session.session_id,
                index=i,
                sub_payload=render_job(part),
                assigned_pseudonym=session.circuit.sn_hops[
                    i % available
                ].pseudonym,
            )
            for i, part in enumerate(parts)
        ]
        session.subs = subs
        return subs

    def dispatch(self, session: MnSession, subs: list[SubService], ctx: Context) -> None:
        """Send every sub-service down the circuit inside its own onion.

        Each onion routes from the master node's neighbour back to the
        assigned slave node; a prebuilt reply-block onion (terminating
        here) travels inside the terminal layer so the executor can
        answer without learning the route.
        """
        if session.state is not MnState.DISPATCHING:
            raise NotReady(f"session {session.session_id} is {session.state.value}")
        if session.circuit.epoch != self.current_epoch:
            raise StaleCircuit(
                f"circuit {session.circuit.circuit_id} from epoch "
                f"{session.circuit.epoch}, current epoch {self.current_epoch}"
            )
        hops = session.circuit.sn_hops
        mn_hop = session.circuit.mn_hop
        session.sub_results = [None] * len(subs)
        for sub in subs:
            a = next(
                i for i, h in enumerate(hops) if h.pseudonym == sub.assigned_pseudonym
            )
            flow = self._fresh("flow")
            self._flows[flow] = (session.session_id, sub.index)
            # Return route: from the hop after the executor back up to here.
            reply_route = [
                (h.pseudonym, h.public_key) for h in hops[a + 1 :]
            ] + [(mn_hop.pseudonym, mn_hop.public_key)]
            reply_block = wrap_onion(
                encode_message({"kind": "sub_home", "flow": flow}), reply_route
            )
            core = {
                "kind": "subjob",
                "flow": flow,
                "index": sub.index,
                "expr": sub.sub_payload,
                "result_key_id": self.keypair.public_part.key_id,
                "result_key": self.keypair.public_part.raw.hex(),
                "reply": onion_to_wire(reply_block),
                "reply_first_hop": reply_route[0][0],
            }
            # Forward route: downstream from this end of the circuit to
            # the executor, reusing the circuit hops in reverse order.
            forward_route = [
                (h.pseudonym, h.public_key) for h in reversed(hops[a:])
            ]
            packet = wrap_onion(encode_message(core), forward_route)
            session.serving.append(sub.assigned_pseudonym)
            ctx.register_secret(
                "sub_payload", sub.sub_payload, session=session.audit_tag
            )
            ctx.send(
                forward_route[0][0],
                RelayMsg(flow_id=flow, onion=packet),
                session=session.audit_tag,
            )

    def notify_manager(self, session: MnSession) -> SealedBox:
        """Build the completion notice: quantities only, never result bytes."""
        if session.state is not MnState.DONE:
            raise NotReady(f"session {session.session_id} is {session.state.value}")
        notice = {
            "kind": "service_done",
            "token": session.token_id,
            "completed": [[session.service_number, 1]],
        }
        return seal(encode_message(notice), self.manager_key)

    # ---- simulation handler ----------------------------------------------

    def handle(self, env: Envelope, ctx: Context) -> None:
        if isinstance(env.body, SealedBox):
            self._handle_sealed(env, ctx)
        elif isinstance(env.body, RelayMsg):
            self._handle_relay(env, ctx)

    def _handle_sealed(self, env: Envelope, ctx: Context) -> None:
        try:
            msg = decode_message(open_box(env.body, self.keypair))
        except (WrongRecipient, Corrupt):
            self.audit["errors"].append("undecryptable envelope")
            return
        kind = msg.get("kind")
        if kind == "circuit_assignment":
            self.circuits[msg["circuit_id"]] = Circuit(
                circuit_id=msg["circuit_id"],
                hops=hops_from_wire(msg["hops"]),
                epoch=msg["epoch"],
            )
        elif kind == "auth":
            try:
                session = self.authenticate(env.body, audit_tag=env.session_id)
            except TokenReplay:
                err = {"kind": "error", "code": "TokenReplay", "token": msg.get("token")}
                ctx.send(
                    self.manager_alias,
                    seal(encode_message(err), self.manager_key),
                    session=env.session_id,
                )
                return
            ok = {"kind": "auth_ok", "token": session.token_id}
            ctx.send(
                self.manager_alias,
                seal(encode_message(ok), self.manager_key),
                session=env.session_id,
            )
        elif kind == "directory_update":
            self.current_epoch = msg["epoch"]

    def _handle_relay(self, env: Envelope, ctx: Context) -> None:
        try:
            instruction, inner = peel(env.body.onion, self.keypair)
        except (WrongRecipient, Corrupt) as exc:
            self.audit["errors"].append(type(exc).__name__)
            return
        if isinstance(instruction, NextHop):
            # The master node can sit mid-route on reply blocks; forward.
            if not ctx.can_route(instruction.pseudonym):
                self.audit["errors"].append("RoutingError")
                return
            ctx.send(
                instruction.pseudonym,
                RelayMsg(
                    flow_id=env.body.flow_id,
                    onion=inner,
                    attachment=env.body.attachment,
                ),
                session=env.session_id,
            )
            return
        core = decode_message(inner)
        kind = core.get("kind")
        if kind == "job":
            self._on_job(core, env, ctx)
        elif kind == "sub_home":
            self._on_sub_result(core, env, ctx)

    def _on_job(self, core: dict, env: Envelope, ctx: Context) -> None:
        sid = self._by_token.get(core.get("token"))
        if sid is None:
            self.audit["errors"].append("job for unknown token")
            return
        session = self.sessions[sid]
        if session.state is not MnState.DISPATCHING:
            self.audit["errors"].append("job for closed session")
            return
        try:
            if session.circuit.epoch != self.current_epoch:
                raise StaleCircuit(
                    f"circuit epoch {session.circuit.epoch} behind "
                    f"{self.current_epoch}"
                )
            job = parse_job(core["expr"])
        except (StaleCircuit, EvalError) as exc:
            self._fail_session(session, type(exc).__name__, ctx)
            return
        session.job = job
        session.result_key = PublicPart(
            key_id=core["result_key_id"], raw=bytes.fromhex(core["result_key"])
        )
        session.reply_onion = onion_from_wire(core["reply"])
        session.reply_first_hop = core["reply_first_hop"]
        session.job_flow = core["flow"]
        n_parts = min(len(session.circuit.sn_hops), max(1, len(job.items)))
        subs = self.decompose(session, n_parts)
        self.dispatch(session, subs, ctx)

    def _on_sub_result(self, core: dict, env: Envelope, ctx: Context) -> None:
        flow = core.get("flow")
        located = self._flows.pop(flow, None)
        if located is None or env.body.attachment is None:
            self.audit["errors"].append("unmatched sub result")
            return
        sid, index = located
        session = self.sessions[sid]
        result = decode_message(open_box(env.body.attachment, self.keypair))
        if not result.get("ok", False):
            self._fail_session(
                session, f"SubJobError[{index}]: {result.get('error')}", ctx
            )
            return
        session.sub_results[index] = result["value"]
        if any(r is None for r in session.sub_results):
            return
        session.transition(MnState.AGGREGATING)
        value = merge_results(session.job.op, list(session.sub_results))
        session.transition(MnState.DONE)
        session.done_tick = ctx.tick
        ctx.register_secret("result", str(value), session=session.audit_tag)
        final = {"kind": "result", "flow": session.job_flow, "value": value}
        attachment = seal(encode_message(final), session.result_key)
        ctx.send(
            session.reply_first_hop,
            RelayMsg(
                flow_id=session.job_flow,
                onion=session.reply_onion,
                attachment=attachment,
            ),
            session=session.audit_tag,
        )
        ctx.send(
            self.manager_alias,
            self.notify_manager(session),
            session=session.audit_tag,
        )

    def _fail_session(self, session: MnSession, error: str, ctx: Context) -> None:
        self.audit["errors"].append({"session": session.session_id, "error": error})
        failed = {
            "kind": "service_failed",
            "token": session.token_id,
            "error": error,
        }
        ctx.send(
            self.manager_alias,
            seal(encode_message(failed), self.manager_key),
            session=session.audit_tag,
        )

    def audit_snapshot(self) -> dict:
        return {
            "sessions": {
                s.session_id: {
                    "token": s.token_id,
                    "history": list(s.history),
                    "serving": list(s.serving),
                    "circuit_id": s.circuit.circuit_id,
                    "circuit_epoch": s.circuit.epoch,
                    "done_tick": s.done_tick,
                    "tag": s.audit_tag,
                }
                for s in self.sessions.values()
            },
            "errors": list(self.audit["errors"]),
        }
