"""Scenario configs and the orchestration that turns one into a transcript.

A scenario names the cast (customers, slave node count), the service
catalog, and an ordered list of events. Events without an explicit tick
fire in order whenever the network goes quiet; an event with at_tick
interleaves with deliveries at that point of the clock. The result of a
run is a transcript plus the report computed from it.

Seeding is hierarchical: every actor draws from its own stream derived
from the master seed, so adding an actor never perturbs the others.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bank import BankGateway
from .compute import MasterNode, SlaveNode
from .customer import Customer
from .directory import (
    ROLE_MN,
    ROLE_SN,
    DirectoryActor,
    DirectoryServer,
    NodeRecord,
    make_pseudonym,
)
from .errors import ConfigError, LivelockSuspected
from .jobs import OPS, JobSyntaxError, parse_job
from .knowledge import ADVERSARY_MODELS
from .manager import MODE_POSTPAID, MODE_PREPAID, Manager, ServiceCatalog, ServiceEntry
from .report import RunReport, build_report
from .sealing import generate_keypair
from .simnet import Envelope, Network, Transcript

KNOWN_FAULTS = ("accept_replayed_tokens",)
EVENT_KINDS = ("request", "rotate", "replay_last_auth", "inject_loop")

_TOP_LEVEL_KEYS = {
    "name",
    "seed",
    "payment_mode",
    "circuit_length",
    "slave_nodes",
    "master_nodes",
    "customers",
    "catalog",
    "events",
    "faults",
    "adversaries",
    "step_budget",
}


def child_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class ScenarioEvent:
    kind: str
    customer: str | None = None
    service: int | None = None
    job: str | None = None
    at_tick: int | None = None


@dataclass
class ScenarioConfig:
    name: str
    seed: int = 0
    payment_mode: str = MODE_POSTPAID
    circuit_length: int = 3
    slave_nodes: int = 3
    customers: list[str] = field(default_factory=lambda: ["c1"])
    catalog: list[ServiceEntry] = field(default_factory=list)
    events: list[ScenarioEvent] = field(default_factory=list)
    faults: tuple[str, ...] = ()
    adversaries: tuple[str, ...] = ADVERSARY_MODELS
    step_budget: int = 10**6

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>") -> "ScenarioConfig":
        def bad(msg: str) -> ConfigError:
            return ConfigError(f"{source}: {msg}")

        if not isinstance(data, dict):
            raise bad("top level must be a mapping")
        unknown = set(data) - _TOP_LEVEL_KEYS
        if unknown:
            raise bad(f"unknown config key(s) {sorted(unknown)}")

        name = data.get("name") or Path(source).stem
        seed = data.get("seed", 0)
        if not isinstance(seed, int):
            raise bad(f"seed must be an integer, got {seed!r}")

        mode = data.get("payment_mode", MODE_POSTPAID)
        if mode not in (MODE_POSTPAID, MODE_PREPAID):
            raise bad(
                f"payment_mode must be {MODE_POSTPAID!r} or {MODE_PREPAID!r}, "
                f"got {mode!r}"
            )

        length = data.get("circuit_length", 3)
        if not isinstance(length, int) or length < 3:
            raise bad(
                f"circuit_length must be at least 3 (got {length!r}): "
                "every circuit keeps a minimum of three hops between "
                "customer and master node"
            )

        slave_nodes = data.get("slave_nodes", 3)
        if not isinstance(slave_nodes, int) or slave_nodes < 1:
            raise bad(f"slave_nodes must be a positive integer, got {slave_nodes!r}")
        if slave_nodes < length - 1:
            raise bad(
                f"slave_nodes {slave_nodes} cannot satisfy circuit_length "
                f"{length}: a circuit needs {length - 1} distinct slave nodes"
            )

        master_nodes = data.get("master_nodes", 1)
        if master_nodes != 1:
            raise bad(
                f"master_nodes must be exactly 1, got {master_nodes!r}"
            )

        customers = data.get("customers", ["c1"])
        if not isinstance(customers, list) or not customers:
            raise bad("customers must be a non-empty list of account labels")
        labels = [str(c) for c in customers]
        if len(set(labels)) != len(labels):
            raise bad("customers contains duplicate labels")

        raw_catalog = data.get("catalog", [])
        if not raw_catalog:
            raise bad("catalog must list at least one service")
        catalog: list[ServiceEntry] = []
        seen_numbers: set[int] = set()
        for i, row in enumerate(raw_catalog):
            sn = row.get("service")
            kind = row.get("kind")
            price = row.get("unit_price")
            if not isinstance(sn, int) or sn < 1:
                raise bad(f"catalog[{i}].service must be a positive integer")
            if sn in seen_numbers:
                raise bad(f"catalog[{i}].service {sn} is listed twice")
            seen_numbers.add(sn)
            if kind not in OPS:
                raise bad(
                    f"catalog[{i}].kind must be one of {list(OPS)}, got {kind!r}"
                )
            if not isinstance(price, int) or price < 1:
                raise bad(f"catalog[{i}].unit_price must be a positive integer")
            catalog.append(
                ServiceEntry(service_number=sn, kind=kind, unit_price=price)
            )
        by_number = {e.service_number: e for e in catalog}

        events: list[ScenarioEvent] = []
        for i, row in enumerate(data.get("events", [])):
            kind = row.get("kind")
            if kind not in EVENT_KINDS:
                raise bad(
                    f"events[{i}].kind must be one of {list(EVENT_KINDS)}, "
                    f"got {kind!r}"
                )
            at_tick = row.get("at_tick")
            if at_tick is not None and (not isinstance(at_tick, int) or at_tick < 1):
                raise bad(f"events[{i}].at_tick must be a positive integer")
            customer = service = job = None
            if kind == "request":
                customer = str(row.get("customer", ""))
                if customer not in labels:
                    raise bad(
                        f"events[{i}].customer {customer!r} is not a "
                        "configured customer label"
                    )
                service = row.get("service")
                if service not in by_number:
                    raise bad(
                        f"events[{i}].service {service!r} is not in the catalog"
                    )
                job = row.get("job")
                try:
                    parsed = parse_job(str(job))
                except JobSyntaxError as exc:
                    raise bad(f"events[{i}].job does not parse: {exc}") from exc
                if parsed.op != by_number[service].kind:
                    raise bad(
                        f"events[{i}].job op {parsed.op!r} does not match "
                        f"service {service} kind {by_number[service].kind!r}"
                    )
            events.append(
                ScenarioEvent(
                    kind=kind,
                    customer=customer,
                    service=service,
                    job=str(job) if job is not None else None,
                    at_tick=at_tick,
                )
            )

        faults = tuple(data.get("faults", []))
        for f in faults:
            if f not in KNOWN_FAULTS:
                raise bad(f"faults contains unknown fault {f!r}")

        adversaries = tuple(data.get("adversaries", ADVERSARY_MODELS))
        for a in adversaries:
            if a not in ADVERSARY_MODELS:
                raise bad(
                    f"adversaries contains unknown model {a!r}; "
                    f"known models are {list(ADVERSARY_MODELS)}"
                )

        budget = data.get("step_budget", 10**6)
        if not isinstance(budget, int) or budget < 1:
            raise bad(f"step_budget must be a positive integer, got {budget!r}")

        return cls(
            name=str(name),
            seed=seed,
            payment_mode=mode,
            circuit_length=length,
            slave_nodes=slave_nodes,
            customers=labels,
            catalog=catalog,
            events=events,
            faults=faults,
            adversaries=adversaries,
            step_budget=budget,
        )


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: not valid YAML{line}: {exc}") from exc
    return ScenarioConfig.from_dict(data or {}, source=str(path))


class LoopActor:
    """Mails itself forever. Exists to exercise the step budget."""

    def handle(self, env, ctx) -> None:
        ctx.send("looper", {"kind": "loop"})


@dataclass
class World:
    config: ScenarioConfig
    seed: int
    network: Network
    transcript: Transcript
    directory: DirectoryActor
    manager: Manager
    bank: BankGateway
    mn: MasterNode
    sns: dict[str, SlaveNode]
    customers: dict[str, Customer]

    def alias_snapshot(self) -> dict[str, dict]:
        roles = self.directory.server.pseudonym_owner_roles()
        snapshot: dict[str, dict] = {}
        for alias, owner in self.network.aliases.items():
            role = roles.get(alias)
            if role is None:
                if owner == "manager":
                    role = "manager"
                elif owner == "bank":
                    role = "bank"
                elif owner == "directory":
                    role = "directory"
                elif owner.startswith("customer-"):
                    role = "customer"
                else:
                    role = "other"
            snapshot[alias] = {"principal": owner, "role": role}
        return snapshot


def build_world(config: ScenarioConfig, seed: int | None = None) -> World:
    seed = config.seed if seed is None else seed
    meta = {
        "seed": seed,
        "scenario": config.name,
        "payment_mode": config.payment_mode,
        "circuit_length": config.circuit_length,
        "adversaries": list(config.adversaries),
        "faults": list(config.faults),
        "step_budget": config.step_budget,
        "drained": False,
    }
    network = Network(Transcript(meta=meta))

    kp = {
        "manager": generate_keypair(f"{seed}/key/manager"),
        "directory": generate_keypair(f"{seed}/key/directory"),
        "bank": generate_keypair(f"{seed}/key/bank"),
        "mn-1": generate_keypair(f"{seed}/key/mn-1"),
    }
    for i in range(1, config.slave_nodes + 1):
        kp[f"sn-{i}"] = generate_keypair(f"{seed}/key/sn-{i}")

    server = DirectoryServer(min_circuit_length=3)
    naming_rng = random.Random(child_seed(seed, "naming"))
    server.register_node(
        NodeRecord(
            true_id="mn-1",
            pseudonym=make_pseudonym(naming_rng),
            public_key=kp["mn-1"].public_part,
            role=ROLE_MN,
        )
    )
    for i in range(1, config.slave_nodes + 1):
        server.register_node(
            NodeRecord(
                true_id=f"sn-{i}",
                pseudonym=make_pseudonym(naming_rng),
                public_key=kp[f"sn-{i}"].public_part,
                role=ROLE_SN,
            )
        )

    directory = DirectoryActor(
        server=server,
        keypair=kp["directory"],
        manager_key=kp["manager"].public_part,
        mn_key=kp["mn-1"].public_part,
        rng=random.Random(child_seed(seed, "directory")),
    )
    catalog = ServiceCatalog(config.catalog)
    manager = Manager(
        keypair=kp["manager"],
        catalog=catalog,
        rng=random.Random(child_seed(seed, "manager")),
        payment_mode=config.payment_mode,
        circuit_length=config.circuit_length,
        ds_key=kp["directory"].public_part,
        mn_key=kp["mn-1"].public_part,
        bank_key=kp["bank"].public_part,
    )
    bank = BankGateway(
        keypair=kp["bank"],
        manager_key=kp["manager"].public_part,
        rng=random.Random(child_seed(seed, "bank")),
    )
    mn = MasterNode(
        keypair=kp["mn-1"],
        manager_key=kp["manager"].public_part,
        rng=random.Random(child_seed(seed, "mn-1")),
        faults=frozenset(config.faults),
    )
    sns: dict[str, SlaveNode] = {}
    customers: dict[str, Customer] = {}

    network.register("manager", manager)
    network.register("directory", directory)
    network.register("bank", bank)
    by_true_id = {r.true_id: r for r in server.registry()}
    network.register("mn-1", mn, aliases=(by_true_id["mn-1"].pseudonym,))
    for i in range(1, config.slave_nodes + 1):
        name = f"sn-{i}"
        sn = SlaveNode(kp[name])
        sns[name] = sn
        network.register(name, sn, aliases=(by_true_id[name].pseudonym,))

    for i, label in enumerate(config.customers, start=1):
        name = f"customer-{i}"
        account = "acct:" + hashlib.sha256(
            f"{seed}/account/{label}".encode()
        ).hexdigest()[:16]
        customer = Customer(
            name=name,
            account_id=account,
            keyseed=f"{seed}/customer/{i}".encode(),
            manager_key=kp["manager"].public_part,
            bank_key=kp["bank"].public_part,
            rng=random.Random(child_seed(seed, f"customer/{i}")),
            payment_mode=config.payment_mode,
        )
        customers[name] = customer
        network.register(name, customer)
        network.transcript.secrets.register("account", account, owner=name)

    world = World(
        config=config,
        seed=seed,
        network=network,
        transcript=network.transcript,
        directory=directory,
        manager=manager,
        bank=bank,
        mn=mn,
        sns=sns,
        customers=customers,
    )
    world.transcript.record_alias_epoch(0, world.alias_snapshot())
    return world


class _EventRunner:
    """Drives one run: deliveries interleaved with scenario events."""

    def __init__(self, world: World):
        self.world = world
        self.rotations = 0
        queued = [e for e in world.config.events if e.at_tick is None]
        timed = [e for e in world.config.events if e.at_tick is not None]
        self.queued = list(queued)
        self.timed = sorted(timed, key=lambda e: e.at_tick)
        self.customer_by_label = {
            label: f"customer-{i}"
            for i, label in enumerate(world.config.customers, start=1)
        }

    def fire(self, event: ScenarioEvent) -> None:
        world = self.world
        if event.kind == "request":
            name = self.customer_by_label[event.customer]
            customer = world.customers[name]
            customer.start_session(
                world.network.context_for(name), event.service, event.job
            )
        elif event.kind == "rotate":
            self.rotations += 1
            prng = random.Random(
                child_seed(world.seed, f"rotate/{self.rotations}")
            )
            world.directory.rotate(
                prng, world.network.context_for("directory")
            )
            world.transcript.record_alias_epoch(
                world.directory.server.epoch, world.alias_snapshot()
            )
        elif event.kind == "replay_last_auth":
            last = world.manager.audit.get("last_auth")
            if last is None:
                raise ConfigError(
                    "replay_last_auth fired before any authentication was sent"
                )
            # Verbatim resend of a captured box: no session tag, since no
            # live actor authored this envelope.
            world.network.inject(
                Envelope(frm="manager", to=last["to"], body=last["box"], session_id=None)
            )
        elif event.kind == "inject_loop":
            if "looper" not in world.network.actors:
                world.network.register("looper", LoopActor())
            world.network.context_for("looper").send("looper", {"kind": "loop"})

    def run(self) -> Transcript:
        world = self.world
        network = world.network
        budget = world.config.step_budget
        while True:
            while self.timed and self.timed[0].at_tick <= network.tick + 1:
                self.fire(self.timed.pop(0))
            if network.pending:
                if network.deliveries >= budget:
                    raise LivelockSuspected(
                        f"exceeded step budget of {budget} deliveries"
                    )
                network.deliver_next()
            elif self.queued:
                self.fire(self.queued.pop(0))
            elif self.timed:
                # Nothing in flight will ever advance the clock to reach
                # these; fire them now in order rather than hanging.
                self.fire(self.timed.pop(0))
            else:
                break
        return world.transcript


def finalize(world: World) -> Transcript:
    t = world.transcript
    t.meta["drained"] = True
    t.meta["deliveries"] = world.network.deliveries
    t.add_keys("manager", world.manager.keypair)
    t.add_keys("directory", world.directory.keypair)
    t.add_keys("bank", world.bank.keypair)
    t.add_keys("mn-1", world.mn.keypair)
    for name, sn in world.sns.items():
        t.add_keys(name, sn.keypair)
    for name, customer in world.customers.items():
        t.add_keys(name, *(s.reply_keypair for s in customer.sessions))
    t.stores["manager_retained"] = world.manager.retained_store()
    t.stores["audit"] = {
        "manager": world.manager.audit_snapshot(),
        "mn": world.mn.audit_snapshot(),
        "bank": world.bank.audit_snapshot(),
        "customers": {
            name: c.audit_snapshot() for name, c in world.customers.items()
        },
        "sns": {name: s.audit_snapshot() for name, s in world.sns.items()},
        "directory": {
            "epoch": world.directory.server.epoch,
            "circuits": list(world.directory.audit["circuits"]),
            "rotations": list(world.directory.audit["rotations"]),
            "denied": world.directory.audit["denied"],
        },
    }
    return t


def run_scenario(
    config: ScenarioConfig,
    seed: int | None = None,
    step_budget: int | None = None,
    payment_mode: str | None = None,
    adversaries: tuple[str, ...] | None = None,
) -> tuple[Transcript, RunReport]:
    """Build the world, drive all events to quiescence, report."""
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = seed
    if step_budget is not None:
        overrides["step_budget"] = step_budget
    if payment_mode is not None:
        if payment_mode not in (MODE_POSTPAID, MODE_PREPAID):
            raise ConfigError(f"unknown payment mode {payment_mode!r}")
        overrides["payment_mode"] = payment_mode
    if adversaries:
        for a in adversaries:
            if a not in ADVERSARY_MODELS:
                raise ConfigError(f"unknown adversary model {a!r}")
        overrides["adversaries"] = tuple(adversaries)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    world = build_world(config)
    _EventRunner(world).run()
    transcript = finalize(world)
    report = build_report(transcript)
    return transcript, report


def replay(path: str | Path) -> tuple[Transcript, RunReport]:
    """Rebuild the report from a transcript on disk, touching no live state."""
    transcript = Transcript.from_jsonl(Path(path).read_text())
    return transcript, build_report(transcript)
