"""Deterministic in-process message network with a replayable transcript.

Every envelope goes through one global FIFO queue. Delivery pops the head,
stamps it with the next tick, records it in the transcript, and runs the
recipient's handler to completion; anything the handler sends is appended
to the queue. With seeded actors this makes whole runs reproducible down
to the byte.

The transcript is append-only and carries everything an offline analysis
needs: the envelope log, the per-principal key inventory, the dictionary
of known secrets, final store snapshots, and the pseudonym history. The
envelope log alone is what a global passive observer gets to see.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Protocol

from .errors import LivelockSuspected, SchemaError
from .sealing import KeyPair, PublicPart
from .wire import Body, body_from_wire, body_size, body_to_wire, kind_of

SCHEMA_VERSION = 1

# A principal name reserved for the keyless global observer. It is part of
# every key inventory (with no keys) so knowledge queries about it are legal.
OBSERVER = "observer"


@dataclass
class Envelope:
    """One message in flight. frm/to are routable aliases, not true ids."""

    frm: str
    to: str
    body: Body
    session_id: str | None = None


@dataclass(frozen=True)
class RecordedEnvelope:
    tick: int
    frm: str
    to: str
    kind: str
    size: int
    session_id: str | None
    body: Body
    dead_letter: bool = False


@dataclass(frozen=True)
class SecretEntry:
    eid: str
    kind: str
    value: str
    session: str | None
    owner: str | None


class SecretsDictionary:
    """Registry of every secret the scenario is supposed to protect.

    Entries are registered by the instrumentation hooks as the secrets
    come into existence (account ids at world build, token ids at
    issuance, and so on). Analysis code matches message fields against
    this dictionary; actors never read it.
    """

    def __init__(self) -> None:
        self.entries: list[SecretEntry] = []
        self._by_kind_value: dict[tuple[str, str], list[SecretEntry]] = {}

    def register(
        self,
        kind: str,
        value: str,
        session: str | None = None,
        owner: str | None = None,
    ) -> str:
        eid = f"sec-{len(self.entries):04d}"
        entry = SecretEntry(eid=eid, kind=kind, value=str(value), session=session, owner=owner)
        self.entries.append(entry)
        self._by_kind_value.setdefault((kind, entry.value), []).append(entry)
        return eid

    def match(self, kind: str, value) -> list[SecretEntry]:
        return self._by_kind_value.get((kind, str(value)), [])

    def of_kind(self, kind: str) -> list[SecretEntry]:
        return [e for e in self.entries if e.kind == kind]

    def to_wire(self) -> list[dict]:
        return [
            {
                "eid": e.eid,
                "kind": e.kind,
                "value": e.value,
                "session": e.session,
                "owner": e.owner,
            }
            for e in self.entries
        ]

    @classmethod
    def from_wire(cls, rows: list[dict]) -> "SecretsDictionary":
        d = cls()
        for row in rows:
            d.entries.append(
                SecretEntry(
                    eid=row["eid"],
                    kind=row["kind"],
                    value=row["value"],
                    session=row.get("session"),
                    owner=row.get("owner"),
                )
            )
        for e in d.entries:
            d._by_kind_value.setdefault((e.kind, e.value), []).append(e)
        return d


class Transcript:
    def __init__(self, meta: dict | None = None):
        self.meta: dict = dict(meta or {})
        self.records: list[RecordedEnvelope] = []
        self.secrets = SecretsDictionary()
        self.key_inventory: dict[str, list[KeyPair]] = {OBSERVER: []}
        self.stores: dict = {}
        self.alias_history: list[dict] = []

    def append(self, record: RecordedEnvelope) -> None:
        self.records.append(record)

    def add_keys(self, principal: str, *keys: KeyPair) -> None:
        self.key_inventory.setdefault(principal, []).extend(keys)

    def record_alias_epoch(self, epoch: int, aliases: dict[str, dict]) -> None:
        self.alias_history.append({"epoch": epoch, "aliases": dict(aliases)})

    # The JSONL layout is: one meta line, one line per envelope in delivery
    # order, then keys / secrets / stores / aliases, then an end marker.
    def to_jsonl(self) -> str:
        lines = [self._dump({"record": "meta", "schema_version": SCHEMA_VERSION, **self.meta})]
        for r in self.records:
            lines.append(
                self._dump(
                    {
                        "record": "envelope",
                        "tick": r.tick,
                        "from": r.frm,
                        "to": r.to,
                        "kind": r.kind,
                        "size": r.size,
                        "session_id": r.session_id,
                        "dead_letter": r.dead_letter,
                        "body": body_to_wire(r.body),
                    }
                )
            )
        lines.append(
            self._dump(
                {
                    "record": "keys",
                    "inventory": {
                        principal: [
                            {
                                "key_id": kp.key_id,
                                "public": kp.public_part.raw.hex(),
                                "secret": kp.secret_part.hex(),
                            }
                            for kp in keys
                        ]
                        for principal, keys in self.key_inventory.items()
                    },
                }
            )
        )
        lines.append(self._dump({"record": "secrets", "entries": self.secrets.to_wire()}))
        lines.append(self._dump({"record": "stores", "stores": self.stores}))
        lines.append(self._dump({"record": "aliases", "history": self.alias_history}))
        lines.append(self._dump({"record": "end", "envelopes": len(self.records)}))
        return "\n".join(lines) + "\n"

    @staticmethod
    def _dump(obj: dict) -> str:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise SchemaError("empty transcript file")
        try:
            head = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"transcript line 1 is not JSON: {exc}") from exc
        if head.get("record") != "meta":
            raise SchemaError("transcript does not start with a meta record")
        if head.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(
                f"unsupported transcript schema_version {head.get('schema_version')!r}, "
                f"expected {SCHEMA_VERSION}"
            )
        t = cls(meta={k: v for k, v in head.items() if k not in ("record", "schema_version")})
        saw_end = False
        for lineno, raw in enumerate(lines[1:], start=2):
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"transcript line {lineno} is not JSON: {exc}") from exc
            rec = row.get("record")
            if rec == "envelope":
                t.records.append(
                    RecordedEnvelope(
                        tick=row["tick"],
                        frm=row["from"],
                        to=row["to"],
                        kind=row["kind"],
                        size=row["size"],
                        session_id=row.get("session_id"),
                        body=body_from_wire(row["body"]),
                        dead_letter=row.get("dead_letter", False),
                    )
                )
            elif rec == "keys":
                for principal, keys in row["inventory"].items():
                    t.key_inventory[principal] = [
                        KeyPair(
                            key_id=k["key_id"],
                            public_part=PublicPart(
                                key_id=k["key_id"], raw=bytes.fromhex(k["public"])
                            ),
                            secret_part=bytes.fromhex(k["secret"]),
                        )
                        for k in keys
                    ]
                t.key_inventory.setdefault(OBSERVER, [])
            elif rec == "secrets":
                t.secrets = SecretsDictionary.from_wire(row["entries"])
            elif rec == "stores":
                t.stores = row["stores"]
            elif rec == "aliases":
                t.alias_history = row["history"]
            elif rec == "end":
                saw_end = True
                if row.get("envelopes") != len(t.records):
                    raise SchemaError("transcript end marker count mismatch")
            else:
                raise SchemaError(f"unknown record type {rec!r} on line {lineno}")
        if not saw_end:
            raise SchemaError("transcript is missing its end marker")
        return t


class Actor(Protocol):  # pragma: no cover - typing aid
    def handle(self, env: Envelope, ctx: "Context") -> None: ...


class Context:
    """The capability surface an actor sees: send mail, register secrets."""

    def __init__(self, network: "Network", actor_name: str):
        self._network = network
        self._actor_name = actor_name

    @property
    def tick(self) -> int:
        return self._network.tick

    def send(self, to: str, body: Body, session: str | None = None) -> None:
        self._network.post(self._actor_name, to, body, session)

    def can_route(self, alias: str) -> bool:
        return alias in self._network.aliases

    def register_secret(
        self, kind: str, value, session: str | None = None
    ) -> str:
        return self._network.transcript.secrets.register(
            kind, str(value), session=session, owner=self._actor_name
        )

    def update_aliases(self, mapping: dict[str, str]) -> None:
        """Apply a pseudonym rotation to the network's routing table.

        Reserved for the directory server, which owns naming.
        """
        self._network.rebind_aliases(mapping)


class Network:
    """Single-queue deterministic delivery with full recording."""

    def __init__(self, transcript: Transcript | None = None):
        self.transcript = transcript or Transcript()
        self.queue: deque[Envelope] = deque()
        self.actors: dict[str, object] = {}
        self.aliases: dict[str, str] = {}
        self.outbound_alias: dict[str, str] = {}
        self.tick = 0
        self.deliveries = 0
        self._contexts: dict[str, Context] = {}

    def register(self, name: str, actor, aliases: tuple[str, ...] = ()) -> Context:
        """Register an actor. With no explicit aliases its name is routable;
        otherwise only the given aliases are (true ids stay off the wire)."""
        if name in self.actors:
            raise ValueError(f"actor {name!r} already registered")
        self.actors[name] = actor
        routable = aliases if aliases else (name,)
        for alias in routable:
            if alias in self.aliases:
                raise ValueError(f"alias {alias!r} already bound")
            self.aliases[alias] = name
        self.outbound_alias[name] = routable[0]
        ctx = Context(self, name)
        self._contexts[name] = ctx
        return ctx

    def context_for(self, name: str) -> Context:
        return self._contexts[name]

    def rebind_aliases(self, mapping: dict[str, str]) -> None:
        for old, new in mapping.items():
            owner = self.aliases.pop(old, None)
            if owner is None:
                continue
            self.aliases[new] = owner
            if self.outbound_alias.get(owner) == old:
                self.outbound_alias[owner] = new

    def post(self, sender_name: str, to: str, body: Body, session: str | None) -> None:
        frm = self.outbound_alias.get(sender_name, sender_name)
        self.queue.append(Envelope(frm=frm, to=to, body=body, session_id=session))

    def inject(self, env: Envelope) -> None:
        """Queue a pre-built envelope verbatim (fault injection path)."""
        self.queue.append(env)

    @property
    def pending(self) -> bool:
        return bool(self.queue)

    def deliver_next(self) -> RecordedEnvelope:
        """Deliver the queue head: stamp, record, then run the handler."""
        env = self.queue.popleft()
        self.tick += 1
        self.deliveries += 1
        owner = self.aliases.get(env.to)
        record = RecordedEnvelope(
            tick=self.tick,
            frm=env.frm,
            to=env.to,
            kind=kind_of(env.body),
            size=body_size(env.body),
            session_id=env.session_id,
            body=env.body,
            dead_letter=owner is None,
        )
        self.transcript.append(record)
        if owner is not None:
            actor = self.actors[owner]
            actor.handle(env, self._contexts[owner])
        return record

    def run_until_quiescent(self, budget: int = 10**6) -> Transcript:
        """Drain the queue, raising LivelockSuspected past the step budget."""
        while self.queue:
            if self.deliveries >= budget:
                raise LivelockSuspected(
                    f"exceeded step budget of {budget} deliveries"
                )
            self.deliver_next()
        return self.transcript
