"""Run reports: invariant checks and linkage verdicts over a transcript.

Everything here is recomputed from the transcript alone (envelope log,
stores, secrets dictionary, alias history, meta). That is what makes
replay honest: loading a transcript from disk and rebuilding the report
must give byte-identical answers, with no access to live actor state.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .jobs import evaluate, parse_job
from .knowledge import LinkageVerdict, knowledge, linkage_report
from .simnet import OBSERVER, Transcript

TRUE_ID_PATTERN = re.compile(r'"(?:sn|mn)-\d+')

# Secret kinds that must never surface outside sealed payloads.
_WIRE_PROTECTED_KINDS = ("account", "token", "payment_reference")

_AGENT_PATHS = {
    "postpaid": [
        ["Preparing", "Serving", "AwaitingPayment", "Killed"],
        ["Preparing", "Serving", "Killed"],
        ["Preparing", "Killed"],
    ],
    "prepaid": [
        ["Preparing", "Serving", "Killed"],
        ["Preparing", "Killed"],
    ],
}

_MN_PATH = ["Authenticating", "Dispatching", "Aggregating", "Done"]


@dataclass(frozen=True)
class InvariantResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class RunReport:
    seed: int
    scenario: str
    payment_mode: str
    invariants: list[InvariantResult] = field(default_factory=list)
    linkage: list[LinkageVerdict] = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.invariants) and all(
            v.matches_expected for v in self.linkage
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario,
            "payment_mode": self.payment_mode,
            "passed": self.passed,
            "invariants": [i.to_dict() for i in self.invariants],
            "linkage": [v.to_dict() for v in self.linkage],
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary_lines(self) -> list[str]:
        lines = [
            f"scenario {self.scenario} seed {self.seed} mode {self.payment_mode}"
        ]
        for inv in self.invariants:
            mark = "PASS" if inv.passed else "FAIL"
            lines.append(f"{mark} {inv.name}: {inv.detail}")
        for v in self.linkage:
            mark = "PASS" if v.matches_expected else "FAIL"
            lines.append(
                f"{mark} linkage[{v.model}/{v.customer}]: "
                f"content={v.content_linked} serving={v.serving_nodes_linked} "
                f"payment_metadata={v.payment_metadata_linked}"
            )
        lines.append("overall " + ("PASS" if self.passed else "FAIL"))
        return lines


def _audit(transcript: Transcript) -> dict:
    return transcript.stores.get("audit", {})


def _sessions_of_manager(transcript: Transcript) -> dict:
    return _audit(transcript).get("manager", {}).get("agents", {})


def _mn_sessions(transcript: Transcript) -> dict:
    return _audit(transcript).get("mn", {}).get("sessions", {})


def _envelope_lines(transcript: Transcript) -> list[str]:
    return [
        line
        for line in transcript.to_jsonl().splitlines()
        if '"record":"envelope"' in line
    ]


# ---- the individual checks -------------------------------------------------


def check_token_single_use(t: Transcript) -> InvariantResult:
    redemptions: dict[str, int] = {}
    for sess in _mn_sessions(t).values():
        redemptions[sess["token"]] = redemptions.get(sess["token"], 0) + 1
    over = sorted(tok for tok, n in redemptions.items() if n > 1)
    tokens = _audit(t).get("manager", {}).get("tokens", {})
    bad_state = sorted(
        tok for tok, state in tokens.items()
        if state not in ("Issued", "Redeemed", "Expired")
    )
    ok = not over and not bad_state
    if ok:
        detail = f"{len(redemptions)} token(s) redeemed exactly once"
    else:
        detail = f"tokens redeemed more than once: {over or bad_state}"
    return InvariantResult("token_single_use", ok, detail)


def check_metadata_only_retention(t: Transcript) -> InvariantResult:
    retained = t.stores.get("manager_retained", {})
    allowed_keys = {"token_id", "amount", "payment_reference", "tick"}
    problems: list[str] = []
    if set(retained.keys()) - {"billing_records"}:
        problems.append(f"unexpected store keys {sorted(retained)}")
    content = {
        e.value
        for e in t.secrets.entries
        if e.kind in ("account", "job_payload", "sub_payload")
    }
    results = {e.value for e in t.secrets.of_kind("result")}
    for row in retained.get("billing_records", []):
        if set(row.keys()) != allowed_keys:
            problems.append(f"record fields {sorted(row.keys())}")
            continue
        if not re.fullmatch(r"tok:[0-9a-f]{16}", str(row["token_id"])):
            problems.append(f"token_id {row['token_id']!r} is not a token handle")
        if not re.fullmatch(r"payref:[0-9a-f]{16}", str(row["payment_reference"])):
            problems.append(
                f"payment_reference {row['payment_reference']!r} is not a "
                "bank reference"
            )
        if not isinstance(row["amount"], int) or not isinstance(row["tick"], int):
            problems.append("amount and tick must be integers")
        for value in row.values():
            if str(value) in content:
                problems.append(f"retained value {value!r} is customer content")
        # The two string fields must not smuggle a result value either;
        # the sanctioned integers (amount, tick) may coincide numerically
        # with a numeric result without meaning anything.
        for fieldname in ("token_id", "payment_reference"):
            if str(row[fieldname]) in results:
                problems.append(f"{fieldname} carries a result value")
    ok = not problems
    detail = (
        f"{len(retained.get('billing_records', []))} billing record(s), "
        "metadata fields only"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("metadata_only_retention", ok, detail)


def check_observer_blindness(t: Transcript) -> InvariantResult:
    ks = knowledge(t, OBSERVER)
    problems: list[str] = []
    if ks.refs:
        problems.append(f"observer resolved {len(ks.refs)} secret(s)")
    lines = _envelope_lines(t)
    protected = [
        e for e in t.secrets.entries if e.kind in _WIRE_PROTECTED_KINDS
    ]
    for entry in protected:
        if any(entry.value in line for line in lines):
            problems.append(f"{entry.kind} {entry.eid} visible on the wire")
    ok = not problems
    detail = (
        f"no plaintext secrets among {len(lines)} envelopes"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("observer_blindness", ok, detail)


def check_true_id_confinement(t: Transcript) -> InvariantResult:
    hits = [
        line for line in _envelope_lines(t) if TRUE_ID_PATTERN.search(line)
    ]
    ok = not hits
    detail = (
        "no node true id appears in any envelope"
        if ok
        else f"{len(hits)} envelope line(s) leak a true id"
    )
    return InvariantResult("true_id_confinement", ok, detail)


def check_circuit_validity(t: Transcript) -> InvariantResult:
    directory = _audit(t).get("directory", {})
    circuits = {c["circuit_id"]: c for c in directory.get("circuits", [])}
    min_len = int(t.meta.get("circuit_length", 3))
    problems: list[str] = []
    for cid, c in circuits.items():
        hops = c["hops"]
        if len(hops) != min_len:
            problems.append(f"{cid} has length {len(hops)}")
        if len(set(hops)) != len(hops):
            problems.append(f"{cid} repeats a hop")
    for sid, sess in _mn_sessions(t).items():
        served = sess.get("serving", [])
        if not served:
            continue
        circuit = circuits.get(sess.get("circuit_id"))
        if circuit is None:
            problems.append(f"{sid} served on an unregistered circuit")
            continue
        stray = [p for p in served if p not in circuit["hops"]]
        if stray:
            problems.append(f"{sid} dispatched outside its circuit: {stray}")
    ok = not problems
    detail = (
        f"{len(circuits)} circuit(s) well-formed, dispatch stayed on-circuit"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("circuit_validity", ok, detail)


def check_epoch_monotonicity(t: Transcript) -> InvariantResult:
    epochs = [entry["epoch"] for entry in t.alias_history]
    problems: list[str] = []
    if epochs != list(range(len(epochs))):
        problems.append(f"epoch sequence {epochs} is not 0..n")
    seen: set[str] = set()
    for entry in t.alias_history:
        node_aliases = {
            a for a, info in entry["aliases"].items() if info["role"] in ("SN", "MN")
        }
        reused = node_aliases & seen
        if reused:
            problems.append(f"pseudonyms reused across epochs: {sorted(reused)}")
        seen |= node_aliases
    ok = not problems
    detail = (
        f"{len(epochs)} epoch(s), pseudonyms globally unique"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("epoch_monotonicity", ok, detail)


def _close_ticks_by_session(t: Transcript) -> dict[str, list[int]]:
    closers: dict[str, list[int]] = {}

    def note(sid, tick) -> None:
        if sid is not None and tick is not None:
            closers.setdefault(sid, []).append(tick)

    for agent in _sessions_of_manager(t).values():
        note(agent["session"], agent["kill_tick"])
    for sess in _mn_sessions(t).values():
        note(sess.get("tag"), sess.get("done_tick"))
    for cust in _audit(t).get("customers", {}).values():
        for s in cust.get("sessions", []):
            note(s.get("session"), s.get("result_tick"))
            note(s.get("session"), s.get("paid_tick"))
    for pay in _audit(t).get("bank", {}).get("payments", []):
        note(pay.get("session"), pay.get("tick"))
    return closers


def check_teardown_finality(t: Transcript) -> InvariantResult:
    killed_sessions = {
        a["session"]
        for a in _sessions_of_manager(t).values()
        if a["kill_tick"] is not None
    }
    closers = _close_ticks_by_session(t)
    problems: list[str] = []
    for sid in sorted(killed_sessions):
        teardown = max(closers.get(sid, [0]))
        late = [
            r.tick
            for r in t.records
            if r.session_id == sid and r.tick > teardown
        ]
        if late:
            problems.append(
                f"session {sid} has {len(late)} envelope(s) after teardown "
                f"tick {teardown}"
            )
    ok = not problems
    detail = (
        f"{len(killed_sessions)} torn-down session(s) went silent"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("teardown_finality", ok, detail)


def check_agent_finality(t: Transcript) -> InvariantResult:
    problems: list[str] = []
    for pid, agent in _sessions_of_manager(t).items():
        if agent["kill_tick"] is None:
            continue
        if not agent["erased"]:
            problems.append(f"{pid} killed but working state survives")
        if agent["history"][-1] != "Killed":
            problems.append(f"{pid} history does not end in Killed")
        late = [
            r.tick
            for r in t.records
            if r.frm == "manager"
            and r.session_id == agent["session"]
            and r.tick > agent["kill_tick"]
        ]
        if late:
            problems.append(f"{pid} sent {len(late)} message(s) after its kill")
    ok = not problems
    killed = sum(
        1 for a in _sessions_of_manager(t).values() if a["kill_tick"] is not None
    )
    detail = (
        f"{killed} agent(s) erased and silent after kill"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("agent_finality", ok, detail)


def check_billing_correctness(t: Transcript) -> InvariantResult:
    records = t.stores.get("manager_retained", {}).get("billing_records", [])
    bills = _audit(t).get("manager", {}).get("bills", [])
    payments = _audit(t).get("bank", {}).get("payments", [])
    problems: list[str] = []
    by_token: dict[str, list[dict]] = {}
    for r in records:
        by_token.setdefault(r["token_id"], []).append(r)
    for tok, rows in by_token.items():
        if len(rows) > 1:
            problems.append(f"token {tok} has {len(rows)} billing records")
    pay_by_token = {p["token"]: p for p in payments}
    if set(by_token) != set(pay_by_token):
        problems.append(
            f"billing records for {sorted(by_token)} but payments for "
            f"{sorted(pay_by_token)}"
        )
    for tok, rows in by_token.items():
        pay = pay_by_token.get(tok)
        if pay is None:
            continue
        if rows[0]["amount"] != pay["amount"]:
            problems.append(f"token {tok} amount mismatch")
        if rows[0]["payment_reference"] != pay["reference"]:
            problems.append(f"token {tok} reference mismatch")
    for bill in bills:
        computed = sum(q * p for _, q, p in bill["lines"])
        if computed != bill["total"]:
            problems.append(
                f"bill for {bill['session']} totals {bill['total']}, "
                f"lines sum to {computed}"
            )
    ok = not problems
    detail = (
        f"{len(records)} billing record(s) match bank settlements and line sums"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("billing_correctness", ok, detail)


def _is_allowed_history(history: list[str], paths: list[list[str]]) -> bool:
    return any(history == path[: len(history)] for path in paths)


def _customer_history_ok(history: list[str], mode: str) -> bool:
    if not history or history[0] != "requested":
        return False
    if "failed" in history:
        return history == ["requested", "failed"]
    order = {name: i for i, name in enumerate(history)}
    def before(a: str, b: str) -> bool:
        return a not in order or b not in order or order[a] < order[b]
    if sorted(order.values()) != list(range(len(order))):
        return False  # repeated states
    if mode == "prepaid":
        for a, b in [("requested", "billed"), ("billed", "paid"),
                     ("paid", "granted"), ("granted", "working"),
                     ("working", "result_received")]:
            if not before(a, b):
                return False
        return True
    for a, b in [("requested", "granted"), ("granted", "working"),
                 ("working", "billed"), ("working", "result_received"),
                 ("billed", "paid"), ("result_received", "paid")]:
        if not before(a, b):
            return False
    return True


def check_state_machine_discipline(t: Transcript) -> InvariantResult:
    mode = t.meta.get("payment_mode", "postpaid")
    problems: list[str] = []
    for pid, agent in _sessions_of_manager(t).items():
        if not _is_allowed_history(agent["history"], _AGENT_PATHS[mode]):
            problems.append(f"agent {pid} history {agent['history']}")
    for sid, sess in _mn_sessions(t).items():
        if not _is_allowed_history(sess["history"], [_MN_PATH]):
            problems.append(f"mn session {sid} history {sess['history']}")
    for name, cust in _audit(t).get("customers", {}).items():
        for s in cust.get("sessions", []):
            if not _customer_history_ok(s["history"], mode):
                problems.append(f"{name} session history {s['history']}")
    ok = not problems
    detail = (
        "all lifecycles follow the allowed state order"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("state_machine_discipline", ok, detail)


def check_result_correctness(t: Transcript) -> InvariantResult:
    problems: list[str] = []
    checked = 0
    for name, cust in _audit(t).get("customers", {}).items():
        for s in cust.get("sessions", []):
            if s.get("result_tick") is None:
                continue
            checked += 1
            expected = evaluate(parse_job(s["job"]))
            if s["result"] != expected:
                problems.append(
                    f"{name} got {s['result']!r}, expected {expected!r} "
                    f"for {s['job']!r}"
                )
    ok = not problems
    detail = (
        f"{checked} delivered result(s) equal direct evaluation"
        if ok
        else "; ".join(problems)
    )
    return InvariantResult("result_correctness", ok, detail)


def check_quiescence(t: Transcript) -> InvariantResult:
    drained = bool(t.meta.get("drained"))
    deliveries = t.meta.get("deliveries", len(t.records))
    budget = t.meta.get("step_budget", 10**6)
    ok = drained and deliveries <= budget
    detail = (
        f"drained after {deliveries} deliveries (budget {budget})"
        if ok
        else "run did not reach quiescence within budget"
    )
    return InvariantResult("quiescence", ok, detail)


ALL_CHECKS = [
    check_token_single_use,
    check_metadata_only_retention,
    check_observer_blindness,
    check_true_id_confinement,
    check_circuit_validity,
    check_epoch_monotonicity,
    check_teardown_finality,
    check_agent_finality,
    check_billing_correctness,
    check_state_machine_discipline,
    check_result_correctness,
    check_quiescence,
]


def build_report(transcript: Transcript, models=None) -> RunReport:
    meta = transcript.meta
    if models is None:
        models = tuple(meta.get("adversaries", ())) or None
    verdicts = (
        linkage_report(transcript, models)
        if models
        else linkage_report(transcript)
    )
    report = RunReport(
        seed=meta.get("seed", 0),
        scenario=meta.get("scenario", "?"),
        payment_mode=meta.get("payment_mode", "postpaid"),
        invariants=[check(transcript) for check in ALL_CHECKS],
        linkage=verdicts,
        counts={
            "envelopes": len(transcript.records),
            "dead_letters": sum(1 for r in transcript.records if r.dead_letter),
            "sessions": len(_sessions_of_manager(transcript)),
            "tokens": len(_audit(transcript).get("manager", {}).get("tokens", {})),
        },
    )
    return report
