"""Deterministic simulator and protocol library for an agent-based,
onion-routed anonymous cloud: customers buy compute through a manager
with single-use tokens, jobs travel pseudonymous circuits to a master
node that splits work across slave nodes, and a replayable transcript
lets offline checks prove what each party could and could not learn.
"""

from .compute import MasterNode, MnSession, MnState, SlaveNode, SubService, sn_execute
from .customer import Customer, CustomerSession
from .directory import (
    Circuit,
    CircuitHop,
    DirectoryActor,
    DirectoryServer,
    NodeRecord,
    RotationEpoch,
)
from .errors import (
    AccessDenied,
    CapacityError,
    ConfigError,
    Corrupt,
    DeadAgent,
    DuplicateNode,
    EvalError,
    JobSyntaxError,
    LivelockSuspected,
    NotReady,
    ProtocolError,
    RoutingError,
    SchemaError,
    StaleCircuit,
    SubJobError,
    TokenReplay,
    UnknownPayment,
    UnknownPrincipal,
    UnknownService,
    WrongRecipient,
)
from .jobs import Job, evaluate, merge_results, parse_job, render_job, sub_jobs
from .knowledge import (
    ADVERSARY_MODELS,
    KnowledgeSet,
    LinkageVerdict,
    knowledge,
    linkage_report,
    store_knowledge,
)
from .manager import (
    AgentProcess,
    AgentState,
    Bill,
    BillingRecord,
    Manager,
    ServiceCatalog,
    ServiceEntry,
    Token,
    TokenState,
)
from .onion import MIN_PROTOCOL_LAYERS, NextHop, OnionPacket, Terminal, peel, wrap_onion
from .report import RunReport, build_report
from .scenario import (
    ScenarioConfig,
    ScenarioEvent,
    build_world,
    child_seed,
    load_config,
    replay,
    run_scenario,
)
from .sealing import KeyPair, PublicPart, SealedBox, generate_keypair, open_box, seal
from .simnet import Envelope, Network, Transcript

__version__ = "0.1.0"

__all__ = [
    "ADVERSARY_MODELS",
    "AccessDenied",
    "AgentProcess",
    "AgentState",
    "Bill",
    "BillingRecord",
    "CapacityError",
    "Circuit",
    "CircuitHop",
    "ConfigError",
    "Corrupt",
    "Customer",
    "CustomerSession",
    "DeadAgent",
    "DirectoryActor",
    "DirectoryServer",
    "DuplicateNode",
    "Envelope",
    "EvalError",
    "Job",
    "JobSyntaxError",
    "KeyPair",
    "KnowledgeSet",
    "LinkageVerdict",
    "LivelockSuspected",
    "MIN_PROTOCOL_LAYERS",
    "Manager",
    "MasterNode",
    "MnSession",
    "MnState",
    "Network",
    "NextHop",
    "NodeRecord",
    "NotReady",
    "OnionPacket",
    "ProtocolError",
    "PublicPart",
    "RotationEpoch",
    "RoutingError",
    "RunReport",
    "ScenarioConfig",
    "ScenarioEvent",
    "SchemaError",
    "SealedBox",
    "ServiceCatalog",
    "ServiceEntry",
    "SlaveNode",
    "StaleCircuit",
    "SubJobError",
    "SubService",
    "Terminal",
    "Token",
    "TokenReplay",
    "TokenState",
    "Transcript",
    "UnknownPayment",
    "UnknownPrincipal",
    "UnknownService",
    "WrongRecipient",
    "build_report",
    "build_world",
    "child_seed",
    "evaluate",
    "generate_keypair",
    "knowledge",
    "linkage_report",
    "load_config",
    "merge_results",
    "open_box",
    "parse_job",
    "peel",
    "render_job",
    "replay",
    "run_scenario",
    "seal",
    "sn_execute",
    "store_knowledge",
    "sub_jobs",
    "wrap_onion",
]
