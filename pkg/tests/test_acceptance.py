"""Acceptance suite: the eight go/no-go checks for this package.

Each test prints exactly one PASS/FAIL line (run with -s to watch them
live). The oracle values are computed with plain Python inside the test,
never with the code under test.
"""

import random
import time

import pytest

from anoncloud.directory import ROLE_MN, ROLE_SN, DirectoryServer, NodeRecord
from anoncloud.errors import StaleCircuit, WrongRecipient
from anoncloud.knowledge import linkage_report
from anoncloud.onion import TERMINAL, peel, wrap_onion
from anoncloud.scenario import ScenarioConfig, run_scenario
from anoncloud.sealing import generate_keypair

from conftest import canonical_dict, make_config

_T0 = time.perf_counter()

EXPECTED_VERDICTS = {
    "observer": (False, False, False),
    "manager_post_session": (False, False, True),
    "manager_mn_collusion": (True, True, True),
}


def declare(number: int, ok: bool, label: str) -> None:
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {label}")
    assert ok, f"criterion {number} failed: {label}"


# -- 1: end-to-end service lifecycle, both payment modes -------------------

def test_criterion_1_end_to_end_both_modes():
    # Oracle results computed right here, by hand.
    oracle = {
        "sum[3,1,4,1,5,9,2,6]": 3 + 1 + 4 + 1 + 5 + 9 + 2 + 6,
        "concat[ab,cd,ef]": "ab" + "cd" + "ef",
        "max[10,5,20]": max(10, 5, 20),
    }
    ok = True
    for mode in ("postpaid", "prepaid"):
        transcript, report = run_scenario(make_config(payment_mode=mode))
        audit = transcript.stores["audit"]
        tokens = audit["manager"]["tokens"]
        ok &= len(tokens) == 3 and all(s == "Redeemed" for s in tokens.values())
        agents = audit["manager"]["agents"]
        ok &= all(
            a["history"][-1] == "Killed" and a["erased"] for a in agents.values()
        )
        records = transcript.stores["manager_retained"]["billing_records"]
        ok &= len(records) == 3
        ok &= {r["token_id"] for r in records} == set(tokens)
        held = [
            s["result"]
            for name in ("customer-1", "customer-2")
            for s in audit["customers"][name]["sessions"]
        ]
        wanted = [oracle["sum[3,1,4,1,5,9,2,6]"], oracle["max[10,5,20]"],
                  oracle["concat[ab,cd,ef]"]]
        ok &= sorted(map(str, held)) == sorted(map(str, wanted))
        ok &= report.passed
    declare(1, ok, "end-to-end lifecycle, postpaid and prepaid")


# -- 2: onion suite over circuit lengths 3..8 ------------------------------

def _route(length: int, tag: str):
    keys = [generate_keypair(f"accept2/{tag}/{i}") for i in range(length)]
    return [(f"node:{tag}{i:02d}", kp.public_part) for i, kp in enumerate(keys)], keys


def test_criterion_2_onion_suite():
    rng = random.Random(20202)
    ok = True

    # 200 random payloads spread across lengths 3..8: exact round trips.
    for i in range(200):
        length = 3 + (i % 6)
        payload = rng.randbytes(rng.randint(1, 512))
        route, keys = _route(length, f"rt{length}")
        packet = wrap_onion(payload, route)
        visited = []
        for kp in keys:
            heading, packet = peel(packet, kp)
            if heading is TERMINAL:
                ok &= packet == payload
                break
            visited.append(heading.pseudonym)
        else:
            ok = False
        ok &= visited == [p for p, _ in route[1:]]

    # Every off-position key attempt fails, at every layer of every length.
    for length in range(3, 9):
        route, keys = _route(length, f"off{length}")
        packet = wrap_onion(b"off-position probe", route)
        for kp in keys:
            for wrong in keys:
                if wrong.key_id == kp.key_id:
                    continue
                try:
                    peel(packet, wrong)
                    ok = False
                except WrongRecipient:
                    pass
            heading, packet = peel(packet, kp)
            if heading is TERMINAL:
                break

    # Hop blindness: a hop's readable view holds the next pseudonym and an
    # opaque blob; no payload bytes, no other pseudonym, anywhere in it.
    for length in range(3, 9):
        route, keys = _route(length, f"bl{length}")
        names = [p.encode() for p, _ in route]
        payload = b"FORBIDDEN-PAYLOAD-MARKER-" + bytes(range(32))
        packet = wrap_onion(payload, route)
        for i, kp in enumerate(keys):
            heading, inner = peel(packet, kp)
            if heading is TERMINAL:
                break
            blob = inner.outer.body
            ok &= payload not in blob
            forbidden = [n for j, n in enumerate(names) if j != i + 1]
            ok &= not any(n in blob for n in forbidden)
            ok &= heading.pseudonym == route[i + 1][0]
            packet = inner
    declare(2, ok, "onion wrap/peel, off-position rejection, hop blindness")


# -- 3: manager bookkeeping across 50 randomized sessions ------------------

def _random_job(rng: random.Random, kind: str) -> str:
    if kind == "concat":
        parts = [
            "".join(rng.choice("abcdefghijklmnopqrstuvwxyz")
                    for _ in range(rng.randint(2, 5)))
            for _ in range(rng.randint(1, 6))
        ]
        return f"concat[{','.join(parts)}]"
    # Values from 10000 up so no numeric result can collide with an
    # amount, a tick, or any other sanctioned small integer.
    items = [str(rng.randint(10000, 99999)) for _ in range(rng.randint(1, 8))]
    return f"{kind}[{','.join(items)}]"


def test_criterion_3_manager_retains_only_billing_fields():
    rng = random.Random(12345)
    labels = ["alpha", "bravo", "charlie"]
    catalog = [
        {"service": 1, "kind": "sum", "unit_price": 7},
        {"service": 2, "kind": "concat", "unit_price": 5},
        {"service": 3, "kind": "max", "unit_price": 4},
    ]
    kinds = {1: "sum", 2: "concat", 3: "max"}
    events = []
    for _ in range(50):
        service = rng.choice([1, 2, 3])
        events.append({
            "kind": "request",
            "customer": rng.choice(labels),
            "service": service,
            "job": _random_job(rng, kinds[service]),
        })
    config = ScenarioConfig.from_dict(
        canonical_dict(name="bulk", customers=labels, catalog=catalog,
                       events=events),
        source="<criterion-3>",
    )
    transcript, report = run_scenario(config)

    records = transcript.stores["manager_retained"]["billing_records"]
    ok = report.passed and len(records) == 50

    # Exhaustive scan: every retained value, matched against the full
    # secrets dictionary, must touch exactly the three sanctioned kinds.
    hit_kinds: set[str] = set()
    for row in records:
        for value in row.values():
            for entry in transcript.secrets.entries:
                if entry.value == str(value):
                    hit_kinds.add(entry.kind)
    ok &= hit_kinds == {"token", "amount", "payment_reference"}
    declare(3, ok, "50 sessions retain token_id, amount, payment_reference only")


# -- 4: pseudonym rotation over a 20-node registry --------------------------

def _registry_of_20(tag: str) -> DirectoryServer:
    server = DirectoryServer()
    naming = random.Random(777)
    server.register_node(NodeRecord(
        true_id="mn-1", pseudonym=f"node:{naming.getrandbits(64):016x}",
        public_key=generate_keypair(f"accept4/{tag}/mn").public_part,
        role=ROLE_MN,
    ))
    for i in range(1, 20):
        server.register_node(NodeRecord(
            true_id=f"sn-{i}", pseudonym=f"node:{naming.getrandbits(64):016x}",
            public_key=generate_keypair(f"accept4/{tag}/sn{i}").public_part,
            role=ROLE_SN,
        ))
    return server


def test_criterion_4_rotation_bijections():
    a = _registry_of_20("a")
    b = _registry_of_20("b")
    ok = True
    ever_used: set[str] = {r.pseudonym for r in a.registry()}
    for n in range(100):
        before = {r.pseudonym for r in a.registry()}
        circuit = a.build_circuit("probe", a.master_record(), 3,
                                  random.Random(5000 + n))
        map_a = a.rotate_pseudonyms(random.Random(9000 + n))
        map_b = b.rotate_pseudonyms(random.Random(9000 + n))
        ok &= map_a == map_b  # same seed, same mapping
        ok &= set(map_a) == before  # total over the current names
        ok &= len(set(map_a.values())) == 20  # injective
        ok &= not set(map_a.values()) & ever_used  # never reused
        ever_used |= set(map_a.values())
        try:
            a.check_circuit_fresh(circuit)
            ok = False
        except StaleCircuit:
            pass
    ok &= a.epoch == 100
    declare(4, ok, "100 seeded rotations of 20 nodes: bijective, reproducible, "
                   "stale circuits rejected")


# -- 5: adversary verdicts across the scenario suite ------------------------

def _suite() -> list[ScenarioConfig]:
    mixed = canonical_dict(
        name="mixed",
        customers=["alpha", "bravo", "charlie"],
        catalog=[
            {"service": 1, "kind": "sum", "unit_price": 7},
            {"service": 2, "kind": "concat", "unit_price": 5},
            {"service": 3, "kind": "max", "unit_price": 4},
            {"service": 4, "kind": "min", "unit_price": 2},
        ],
        events=[
            {"kind": "request", "customer": "charlie", "service": 4,
             "job": "min[44,11,33]"},
            {"kind": "request", "customer": "alpha", "service": 1,
             "job": "sum[3,1,4,1,5,9,2,6]"},
            {"kind": "rotate"},
            {"kind": "request", "customer": "bravo", "service": 2,
             "job": "concat[ab,cd,ef]"},
            {"kind": "request", "customer": "charlie", "service": 3,
             "job": "max[10,5,20]"},
        ],
    )
    return [
        make_config(),
        make_config(payment_mode="prepaid"),
        ScenarioConfig.from_dict(mixed, source="<criterion-5>"),
    ]


def test_criterion_5_adversary_verdicts_exact():
    ok = True
    checked = 0
    for config in _suite():
        transcript, _ = run_scenario(config)
        for verdict in linkage_report(transcript):
            got = (verdict.content_linked, verdict.serving_nodes_linked,
                   verdict.payment_metadata_linked)
            ok &= got == EXPECTED_VERDICTS[verdict.model]
            checked += 1
    ok &= checked == (2 + 2 + 3) * 3
    declare(5, ok, "linkage verdicts exact for all models across the suite")


# -- 6: the replay fault trips exactly one invariant -------------------------

def test_criterion_6_fault_isolation():
    config = make_config(
        name="fault",
        customers=["alpha"],
        faults=["accept_replayed_tokens"],
        events=[
            {"kind": "request", "customer": "alpha", "service": 1,
             "job": "sum[2,4,6,8]"},
            {"kind": "replay_last_auth"},
        ],
    )
    _, report = run_scenario(config)
    failing = [inv.name for inv in report.invariants if not inv.passed]
    ok = failing == ["token_single_use"]
    declare(6, ok, "token replay fault fails token_single_use and nothing else")


# -- 7: scale sweep ----------------------------------------------------------

def test_criterion_7_scale_sweep():
    def measure(n_sn: int):
        config = make_config(name=f"scale-{n_sn}", slave_nodes=n_sn)
        start = time.perf_counter()
        transcript, report = run_scenario(config)
        elapsed = time.perf_counter() - start
        return elapsed, len(transcript.records), report

    measure(3)  # warm-up: imports, first-use caches
    ok = True
    baseline_time, baseline_env, report = measure(3)
    ok &= all(inv.passed for inv in report.invariants)
    for n_sn in (10, 100):
        elapsed, envelopes, report = measure(n_sn)
        ok &= all(inv.passed for inv in report.invariants)
        # Linear in delivered envelopes, factor-2 tolerance; the floor
        # keeps sub-50ms wall times from dominating the ratio.
        time_ratio = max(elapsed, 0.05) / max(baseline_time, 0.05)
        env_ratio = max(envelopes / baseline_env, 1.0)
        ok &= time_ratio <= 2.0 * env_ratio
    declare(7, ok, "invariants hold at 3/10/100 slave nodes, runtime linear "
                   "in envelopes within factor 2")


# -- 8: bytewise determinism -------------------------------------------------

def test_criterion_8_same_seed_same_bytes():
    ok = True
    for mode in ("postpaid", "prepaid"):
        t1, _ = run_scenario(make_config(payment_mode=mode))
        t2, _ = run_scenario(make_config(payment_mode=mode))
        ok &= t1.to_jsonl() == t2.to_jsonl()
    declare(8, ok, "same-seed runs produce byte-identical transcripts")


def test_acceptance_suite_under_60s():
    elapsed = time.perf_counter() - _T0
    print(f"acceptance suite wall time: {elapsed:.2f}s")
    assert elapsed < 60.0
