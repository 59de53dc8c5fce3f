"""What each principal can learn from a finished run, and what links.

The model is deliberately mechanical. A principal's knowledge is rebuilt
offline from the transcript: it reads the envelopes it sent or received,
decrypts whatever its recorded keys open, peels whatever onion layers
those keys peel, and nothing else. Every readable plaintext becomes a
co-occurrence group of atoms: references into the secrets dictionary
plus bridge atoms for the aliases, session tags, and flow ids seen
together. Linkage is then just connectivity over those groups, so a
claim like "the provider side cannot tie an account to job content"
turns into a graph question with a yes or no answer.

Three adversary readings are built in:

    observer              every envelope, no keys at all
    manager_post_session  only what the manager's retained store holds
    manager_mn_collusion  manager and master node pooling live knowledge
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import Corrupt, UnknownPrincipal, WrongRecipient
from .onion import OnionPacket, Terminal, peel
from .sealing import KeyPair, SealedBox, open_box
from .simnet import OBSERVER, RecordedEnvelope, Transcript
from .wire import RelayMsg, decode_message

ADVERSARY_MODELS = (
    "observer",
    "manager_post_session",
    "manager_mn_collusion",
)

# Message fields whose values are worth looking up in the secrets
# dictionary, and the secret kinds each field may contain.
_FIELD_KINDS: dict[str, tuple[str, ...]] = {
    "account": ("account",),
    "payer_account": ("account",),
    "token": ("token",),
    "token_id": ("token",),
    "amount": ("amount",),
    "total": ("amount",),
    "payment_reference": ("payment_reference",),
    "reference": ("payment_reference",),
    "expr": ("job_payload", "sub_payload"),
    "value": ("result",),
}

Atom = object  # secret eids (str) or bridge tuples


@dataclass
class KnowledgeSet:
    principal: str
    refs: set[str] = field(default_factory=set)
    groups: list[frozenset] = field(default_factory=list)

    def merge(self, other: "KnowledgeSet") -> "KnowledgeSet":
        return KnowledgeSet(
            principal=f"{self.principal}+{other.principal}",
            refs=self.refs | other.refs,
            groups=self.groups + other.groups,
        )

    # -- connectivity over co-occurrence groups --------------------------

    def _components(self) -> dict:
        parent: dict = {}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for group in self.groups:
            atoms = list(group)
            for a in atoms:
                parent.setdefault(a, a)
            for a in atoms[1:]:
                ra, rb = find(atoms[0]), find(a)
                if ra != rb:
                    parent[rb] = ra
        return {a: find(a) for a in parent}

    def linked(self, atom_a: Atom, atom_b: Atom) -> bool:
        roots = self._components()
        if atom_a not in roots or atom_b not in roots:
            return False
        return roots[atom_a] == roots[atom_b]

    def component_of(self, atom: Atom) -> set:
        roots = self._components()
        if atom not in roots:
            return set()
        root = roots[atom]
        return {a for a, r in roots.items() if r == root}


def _alias_owners(transcript: Transcript) -> dict[str, tuple[str, str]]:
    """alias -> (principal, role), unioned over every recorded epoch."""
    owners: dict[str, tuple[str, str]] = {}
    for entry in transcript.alias_history:
        for alias, info in entry["aliases"].items():
            owners[alias] = (info["principal"], info["role"])
    return owners


def _walk_fields(msg, out: list) -> None:
    if isinstance(msg, dict):
        for key, value in msg.items():
            kinds = _FIELD_KINDS.get(key)
            if kinds is not None and isinstance(value, (str, int)):
                out.append((kinds, value))
            _walk_fields(value, out)
    elif isinstance(msg, list):
        for item in msg:
            _walk_fields(item, out)


def _try_decode(raw: bytes) -> dict | None:
    try:
        msg = decode_message(raw)
    except Exception:
        return None
    return msg if isinstance(msg, dict) else None


class _Reader:
    """Decryption capability of one principal: a bag of keypairs."""

    def __init__(self, keys: list[KeyPair]):
        self._by_id = {kp.key_id: kp for kp in keys}

    def open(self, box: SealedBox) -> bytes | None:
        kp = self._by_id.get(box.recipient_key_id)
        if kp is None:
            return None
        try:
            return open_box(box, kp)
        except (WrongRecipient, Corrupt):
            return None

    def peel_all(self, packet: OnionPacket) -> tuple[list[str], bytes | None]:
        """Peel as many consecutive layers as the keys allow.

        Returns the next-hop pseudonyms uncovered along the way and, if a
        terminal layer was reached, its payload.
        """
        hops: list[str] = []
        current = packet
        while True:
            kp = self._by_id.get(current.outer.recipient_key_id)
            if kp is None:
                return hops, None
            try:
                instruction, inner = peel(current, kp)
            except (WrongRecipient, Corrupt):
                return hops, None
            if isinstance(instruction, Terminal):
                return hops, inner
            hops.append(instruction.pseudonym)
            current = inner


def knowledge(
    transcript: Transcript, principal: str, upto_tick: int | None = None
) -> KnowledgeSet:
    """Rebuild what one principal could know from its own traffic.

    The observer principal reads every envelope's metadata and any plain
    bodies, but holds no keys. Unknown principals are an error, not an
    empty answer.
    """
    if principal not in transcript.key_inventory:
        raise UnknownPrincipal(f"no such principal {principal!r} in transcript")
    reader = _Reader(transcript.key_inventory[principal])
    owners = _alias_owners(transcript)
    my_aliases = {a for a, (p, _) in owners.items() if p == principal}
    ks = KnowledgeSet(principal=principal)
    secrets = transcript.secrets

    # Secrets this principal authored are known to it by construction,
    # each bridged to the session they were registered under.
    for entry in secrets.entries:
        if entry.owner == principal:
            ks.refs.add(entry.eid)
            group = {entry.eid}
            if entry.session is not None:
                group.add(("session", entry.session))
            ks.groups.append(frozenset(group))

    for record in transcript.records:
        if upto_tick is not None and record.tick > upto_tick:
            continue
        is_observer = principal == OBSERVER
        is_sender = record.frm in my_aliases
        is_recipient = record.to in my_aliases and not record.dead_letter
        if not (is_observer or is_sender or is_recipient):
            continue

        bridge: set = {("net", record.frm), ("net", record.to)}
        if record.session_id is not None:
            bridge.add(("session", record.session_id))

        plaintexts: list[dict] = []
        if isinstance(record.body, dict):
            plaintexts.append(record.body)
        elif isinstance(record.body, SealedBox) and not is_observer:
            raw = reader.open(record.body)
            if raw is None and is_sender:
                # A top-level box is always built by its sender, so the
                # sender knows the plaintext even without the recipient key.
                raw = _raw_if_authored(record.body, transcript, principal)
            if raw is not None:
                msg = _try_decode(raw)
                if msg is not None:
                    plaintexts.append(msg)
        elif isinstance(record.body, RelayMsg) and not is_observer:
            bridge.add(("flow", record.body.flow_id))
            hops, terminal = reader.peel_all(record.body.onion)
            for hop in hops:
                bridge.add(("net", hop))
            if terminal is not None:
                msg = _try_decode(terminal)
                if msg is not None:
                    plaintexts.append(msg)
            if record.body.attachment is not None:
                raw = reader.open(record.body.attachment)
                if raw is not None:
                    msg = _try_decode(raw)
                    if msg is not None:
                        plaintexts.append(msg)

        group = set(bridge)
        for msg in plaintexts:
            fields: list = []
            _walk_fields(msg, fields)
            for kinds, value in fields:
                for kind in kinds:
                    for entry in secrets.match(kind, value):
                        ks.refs.add(entry.eid)
                        group.add(entry.eid)
        ks.groups.append(frozenset(group))

    return ks


def _raw_if_authored(box: SealedBox, transcript: Transcript, principal: str) -> bytes | None:
    """Decrypt a self-authored box by borrowing the recipient's key.

    This is an analysis convenience, not a capability leak: the sender
    chose the plaintext, so reading it back tells the sender nothing new.
    """
    for keys in transcript.key_inventory.values():
        for kp in keys:
            if kp.key_id == box.recipient_key_id:
                try:
                    return open_box(box, kp)
                except (WrongRecipient, Corrupt):
                    return None
    return None


def store_knowledge(transcript: Transcript, store: str = "manager_retained") -> KnowledgeSet:
    """Knowledge recoverable from a retained store alone (post teardown)."""
    ks = KnowledgeSet(principal=f"store:{store}")
    secrets = transcript.secrets
    data = transcript.stores.get(store, {})
    for row in data.get("billing_records", []):
        group: set = set()
        fields: list = []
        _walk_fields(row, fields)
        for kinds, value in fields:
            for kind in kinds:
                for entry in secrets.match(kind, value):
                    ks.refs.add(entry.eid)
                    group.add(entry.eid)
        if group:
            ks.groups.append(frozenset(group))
    return ks


@dataclass(frozen=True)
class LinkageVerdict:
    model: str
    customer: str
    content_linked: bool
    serving_nodes_linked: bool
    payment_metadata_linked: bool
    expected_content: bool
    expected_serving: bool
    expected_payment_metadata: bool

    @property
    def matches_expected(self) -> bool:
        return (
            self.content_linked == self.expected_content
            and self.serving_nodes_linked == self.expected_serving
            and self.payment_metadata_linked == self.expected_payment_metadata
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "customer": self.customer,
            "content_linked": self.content_linked,
            "serving_nodes_linked": self.serving_nodes_linked,
            "payment_metadata_linked": self.payment_metadata_linked,
            "expected": {
                "content_linked": self.expected_content,
                "serving_nodes_linked": self.expected_serving,
                "payment_metadata_linked": self.expected_payment_metadata,
            },
            "matches_expected": self.matches_expected,
        }


_EXPECTED = {
    # model -> (content, serving nodes, payment metadata)
    "observer": (False, False, False),
    "manager_post_session": (False, False, True),
    "manager_mn_collusion": (True, True, True),
}


def adversary_knowledge(transcript: Transcript, model: str) -> KnowledgeSet:
    if model == "observer":
        return knowledge(transcript, OBSERVER)
    if model == "manager_post_session":
        return store_knowledge(transcript)
    if model == "manager_mn_collusion":
        mn = next(
            (p for p in transcript.key_inventory if p.startswith("mn-")), None
        )
        if mn is None:
            raise UnknownPrincipal("transcript has no master node principal")
        return knowledge(transcript, "manager").merge(knowledge(transcript, mn))
    raise ValueError(f"unknown adversary model {model!r}")


def linkage_report(transcript: Transcript, models=ADVERSARY_MODELS) -> list[LinkageVerdict]:
    """Per-model, per-customer linkage verdicts with their expectations."""
    secrets = transcript.secrets
    owners = _alias_owners(transcript)
    sn_pseudonyms = {a for a, (_, role) in owners.items() if role == "SN"}
    customers = sorted(
        p for p in transcript.key_inventory if p.startswith("customer-")
    )
    verdicts: list[LinkageVerdict] = []
    for model in models:
        ks = adversary_knowledge(transcript, model)
        token_eids = {e.eid for e in secrets.of_kind("token")}
        payref_eids = {e.eid for e in secrets.of_kind("payment_reference")}
        payment_linked = any(
            ks.linked(t, p)
            for t in token_eids & ks.refs
            for p in payref_eids & ks.refs
        )
        for customer in customers:
            account_eids = [
                e.eid
                for e in secrets.of_kind("account")
                if e.owner == customer and e.eid in ks.refs
            ]
            content_eids = {
                e.eid
                for e in secrets.entries
                if e.kind in ("job_payload", "sub_payload", "result")
            }
            content = any(
                ks.linked(a, c)
                for a in account_eids
                for c in content_eids & ks.refs
            )
            serving = False
            for a in account_eids:
                atoms = ks.component_of(a)
                if any(
                    atom in atoms for atom in (("net", p) for p in sn_pseudonyms)
                ):
                    serving = True
                    break
            exp_content, exp_serving, exp_payment = _EXPECTED[model]
            verdicts.append(
                LinkageVerdict(
                    model=model,
                    customer=customer,
                    content_linked=content,
                    serving_nodes_linked=serving,
                    payment_metadata_linked=payment_linked,
                    expected_content=exp_content,
                    expected_serving=exp_serving,
                    expected_payment_metadata=exp_payment,
                )
            )
    return verdicts
