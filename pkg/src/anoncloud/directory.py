"""Internal directory server: node registry, pseudonym rotation, circuits.

The directory server is the only principal that ever sees a node's true
id. Everyone else, including the manager, works with the current-epoch
pseudonyms. Rotation draws a fresh pseudonym for every registered node
from a seeded generator and bumps the epoch, which invalidates every
circuit built earlier.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import AccessDenied, CapacityError, DuplicateNode, StaleCircuit
from .sealing import PublicPart, SealedBox, open_box, seal
from .wire import decode_message, encode_message

ROLE_SN = "SN"
ROLE_MN = "MN"


@dataclass
class NodeRecord:
    true_id: str
    pseudonym: str
    public_key: PublicPart
    role: str


@dataclass(frozen=True)
class CircuitHop:
    pseudonym: str
    public_key: PublicPart


@dataclass(frozen=True)
class Circuit:
    """An ordered hop list ending at the master node, valid for one epoch."""

    circuit_id: str
    hops: tuple[CircuitHop, ...]
    epoch: int

    @property
    def sn_hops(self) -> tuple[CircuitHop, ...]:
        return self.hops[:-1]

    @property
    def mn_hop(self) -> CircuitHop:
        return self.hops[-1]


@dataclass
class RotationEpoch:
    number: int
    mapping: dict[str, str] = field(default_factory=dict)


def make_pseudonym(rng: random.Random) -> str:
    return f"node:{rng.getrandbits(64):016x}"


class DirectoryServer:
    """Registry plus circuit factory. True ids never leave this object."""

    def __init__(self, min_circuit_length: int = 3):
        if min_circuit_length < 3:
            raise ValueError("circuits must be at least three hops long")
        self.min_circuit_length = min_circuit_length
        self._registry: dict[str, NodeRecord] = {}
        self._pseudonyms: set[str] = set()
        self._used_pseudonyms: set[str] = set()
        self._epoch = 0
        self._epochs: list[RotationEpoch] = [RotationEpoch(number=0)]
        self._circuit_counter = 0

    @property
    def epoch(self) -> int:
        return self._epoch

    @property
    def rotation_history(self) -> list[RotationEpoch]:
        return list(self._epochs)

    def register_node(self, record: NodeRecord) -> None:
        if record.role not in (ROLE_SN, ROLE_MN):
            raise ValueError(f"unknown role {record.role!r}")
        if record.true_id in self._registry:
            raise DuplicateNode(f"true id {record.true_id!r} already registered")
        if record.pseudonym in self._pseudonyms:
            raise DuplicateNode(f"pseudonym {record.pseudonym!r} already registered")
        self._registry[record.true_id] = record
        self._pseudonyms.add(record.pseudonym)
        self._used_pseudonyms.add(record.pseudonym)

    def node_count(self, role: str | None = None) -> int:
        if role is None:
            return len(self._registry)
        return sum(1 for r in self._registry.values() if r.role == role)

    def registry(self) -> list[NodeRecord]:
        return list(self._registry.values())

    def rotate_pseudonyms(self, prng: random.Random) -> dict[str, str]:
        """Assign every node a fresh pseudonym and advance the epoch.

        Returns the old-to-new mapping. New names are drawn from the
        given generator and never collide with any name used before,
        so the mapping is a bijection and the same seed reproduces it.
        """
        mapping: dict[str, str] = {}
        for record in self._registry.values():
            new = make_pseudonym(prng)
            while new in self._used_pseudonyms:
                new = make_pseudonym(prng)
            mapping[record.pseudonym] = new
            self._used_pseudonyms.add(new)
            record.pseudonym = new
        self._pseudonyms = {r.pseudonym for r in self._registry.values()}
        self._epoch += 1
        self._epochs.append(RotationEpoch(number=self._epoch, mapping=dict(mapping)))
        return mapping

    def master_record(self) -> NodeRecord:
        for record in self._registry.values():
            if record.role == ROLE_MN:
                return record
        raise CapacityError("no master node registered")

    def build_circuit(
        self,
        request: str,
        mn: NodeRecord,
        length: int,
        prng: random.Random,
    ) -> Circuit:
        """Pick a uniform random circuit of the requested length.

        The slave-node hops are drawn without replacement and the given
        master node terminates the circuit. `request` is a free-form
        service descriptor kept only for the circuit id. The finished
        circuit goes to the manager, never to a customer.
        """
        if length < self.min_circuit_length:
            raise ValueError(
                f"circuit length {length} below minimum {self.min_circuit_length}"
            )
        if mn.true_id not in self._registry or mn.role != ROLE_MN:
            raise ValueError(f"{mn.true_id!r} is not a registered master node")
        sns = [r for r in self._registry.values() if r.role == ROLE_SN]
        needed = length - 1
        if len(sns) < needed:
            raise CapacityError(
                f"need {needed} slave nodes for a length-{length} circuit, "
                f"have {len(sns)}"
            )
        chosen = prng.sample(sns, needed)
        self._circuit_counter += 1
        cid = f"circ:{self._circuit_counter:04d}:{prng.getrandbits(32):08x}"
        hops = tuple(
            CircuitHop(pseudonym=r.pseudonym, public_key=r.public_key)
            for r in chosen
        ) + (CircuitHop(pseudonym=mn.pseudonym, public_key=mn.public_key),)
        return Circuit(circuit_id=cid, hops=hops, epoch=self._epoch)

    def check_circuit_fresh(self, circuit: Circuit) -> None:
        if circuit.epoch != self._epoch:
            raise StaleCircuit(
                f"circuit {circuit.circuit_id} is from epoch {circuit.epoch}, "
                f"current epoch is {self._epoch}"
            )

    def current_list(self, requester_role: str) -> list[tuple[str, PublicPart]]:
        """Current (pseudonym, public key) listing for manager or MN eyes."""
        if requester_role not in ("manager", "mn"):
            raise AccessDenied(
                f"directory listing refused for role {requester_role!r}"
            )
        return [
            (r.pseudonym, r.public_key) for r in self._registry.values()
        ]

    def pseudonym_owner_roles(self) -> dict[str, str]:
        """Pseudonym-to-role view, used by simulation plumbing only."""
        return {r.pseudonym: r.role for r in self._registry.values()}


def hops_to_wire(circuit: Circuit) -> list[list]:
    return [
        [h.pseudonym, h.public_key.key_id, h.public_key.raw.hex()]
        for h in circuit.hops
    ]


def hops_from_wire(rows: list[list]) -> tuple[CircuitHop, ...]:
    return tuple(
        CircuitHop(
            pseudonym=pseud,
            public_key=PublicPart(key_id=kid, raw=bytes.fromhex(raw)),
        )
        for pseud, kid, raw in rows
    )


class DirectoryActor:
    """Network face of the directory server.

    Builds circuits on the manager's sealed request. The circuit goes out
    twice: the full hop list back to the manager and a copy straight to
    the master node, so the master node holds the hop keys it needs for
    dispatch before any authentication can reach it.
    """

    def __init__(self, server, keypair, manager_key, mn_key, rng,
                 manager_alias: str = "manager"):
        self.server = server
        self.keypair = keypair
        self.manager_key = manager_key
        self.mn_key = mn_key
        self.rng = rng
        self.manager_alias = manager_alias
        self.audit: dict = {"circuits": [], "rotations": [], "denied": 0}

    def _role_of(self, alias: str) -> str:
        if alias == self.manager_alias:
            return "manager"
        return self.server.pseudonym_owner_roles().get(alias, "customer").lower()

    def handle(self, env, ctx) -> None:
        if not isinstance(env.body, SealedBox):
            return
        try:
            msg = decode_message(open_box(env.body, self.keypair))
        except Exception:
            return
        kind = msg.get("kind")
        if kind == "circuit_request":
            if self._role_of(env.frm) != "manager":
                self.audit["denied"] += 1
                return
            mn = self.server.master_record()
            circuit = self.server.build_circuit(
                request=msg.get("service_kind", "compute"),
                mn=mn,
                length=msg["length"],
                prng=self.rng,
            )
            self.audit["circuits"].append(
                {
                    "circuit_id": circuit.circuit_id,
                    "epoch": circuit.epoch,
                    "hops": [h.pseudonym for h in circuit.hops],
                }
            )
            assignment = {
                "kind": "circuit_assignment",
                "circuit_id": circuit.circuit_id,
                "hops": hops_to_wire(circuit),
                "epoch": circuit.epoch,
            }
            ctx.send(
                mn.pseudonym,
                seal(encode_message(assignment), self.mn_key),
                session=env.session_id,
            )
            reply = {
                "kind": "circuit",
                "ref": msg["ref"],
                "circuit_id": circuit.circuit_id,
                "hops": hops_to_wire(circuit),
                "epoch": circuit.epoch,
            }
            ctx.send(
                self.manager_alias,
                seal(encode_message(reply), self.manager_key),
                session=env.session_id,
            )
        elif kind == "list_request":
            role = self._role_of(env.frm)
            try:
                listing = self.server.current_list(role)
            except AccessDenied:
                self.audit["denied"] += 1
                err = {"kind": "error", "code": "AccessDenied"}
                ctx.send(env.frm, err, session=env.session_id)
                return
            nodes = [[p, k.key_id, k.raw.hex()] for p, k in listing]
            reply = {"kind": "node_list", "epoch": self.server.epoch, "nodes": nodes}
            key = self.manager_key if role == "manager" else self.mn_key
            ctx.send(
                env.frm, seal(encode_message(reply), key), session=env.session_id
            )

    def rotate(self, prng: random.Random, ctx) -> dict[str, str]:
        """Rotate pseudonyms, rebind routing, and push the new epoch out."""
        mn_alias_before = None
        try:
            mn_alias_before = self.server.master_record().pseudonym
        except CapacityError:
            pass
        mapping = self.server.rotate_pseudonyms(prng)
        self.audit["rotations"].append(self.server.epoch)
        ctx.update_aliases(mapping)
        update = {"kind": "directory_update", "epoch": self.server.epoch}
        ctx.send(
            self.manager_alias, seal(encode_message(update), self.manager_key)
        )
        if mn_alias_before is not None:
            ctx.send(
                mapping.get(mn_alias_before, mn_alias_before),
                seal(encode_message(update), self.mn_key),
            )
        return mapping
