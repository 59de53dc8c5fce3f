import json

import pytest

from anoncloud.errors import LivelockSuspected, SchemaError
from anoncloud.sealing import generate_keypair, seal
from anoncloud.simnet import OBSERVER, Envelope, Network, Transcript
from anoncloud.wire import RelayMsg, encode_message
from anoncloud.onion import wrap_onion


class Echo:
    """Replies to every ping with one pong, then stays quiet."""

    def handle(self, env, ctx):
        if env.body.get("kind") == "ping":
            ctx.send(env.frm, {"kind": "pong", "n": env.body["n"]})


class Chatter:
    """Mails itself forever; exists to trip the step budget."""

    def handle(self, env, ctx):
        ctx.send("chatter", {"kind": "again"})


class Sink:
    def handle(self, env, ctx):
        pass


def test_fifo_delivery_and_ticks():
    net = Network()
    net.register("echo", Echo())
    net.register("caller", Sink())
    for n in range(3):
        net.post("caller", "echo", {"kind": "ping", "n": n}, None)
    net.run_until_quiescent()
    log = [(r.tick, r.to, r.body["n"]) for r in net.transcript.records]
    # All three pings land before any pong: single global FIFO.
    assert log == [
        (1, "echo", 0), (2, "echo", 1), (3, "echo", 2),
        (4, "caller", 0), (5, "caller", 1), (6, "caller", 2),
    ]
    assert net.deliveries == 6


def test_unroutable_mail_is_a_dead_letter():
    net = Network()
    net.register("caller", Sink())
    net.post("caller", "nobody", {"kind": "x"}, None)
    net.run_until_quiescent()
    (record,) = net.transcript.records
    assert record.dead_letter


def test_alias_rebinding_redirects_and_strands():
    net = Network()
    sink = Sink()
    net.register("node", sink, aliases=("node:old",))
    net.register("caller", Sink())
    net.rebind_aliases({"node:old": "node:new"})
    net.post("caller", "node:old", {"kind": "x"}, None)
    net.post("caller", "node:new", {"kind": "y"}, None)
    net.run_until_quiescent()
    old, new = net.transcript.records
    assert old.dead_letter and not new.dead_letter
    # Outbound stamping follows the rotation too.
    net.post("node", "caller", {"kind": "z"}, None)
    net.run_until_quiescent()
    assert net.transcript.records[-1].frm == "node:new"


def test_duplicate_registration_rejected():
    net = Network()
    net.register("a", Sink())
    with pytest.raises(ValueError):
        net.register("a", Sink())
    with pytest.raises(ValueError):
        net.register("b", Sink(), aliases=("a",))


def test_explicit_aliases_keep_true_name_unroutable():
    net = Network()
    net.register("sn-1", Sink(), aliases=("node:aaaa",))
    net.register("caller", Sink())
    net.post("caller", "sn-1", {"kind": "x"}, None)
    net.run_until_quiescent()
    (record,) = net.transcript.records
    assert record.dead_letter


def test_livelock_budget():
    net = Network()
    net.register("chatter", Chatter())
    net.post("chatter", "chatter", {"kind": "go"}, None)
    with pytest.raises(LivelockSuspected):
        net.run_until_quiescent(budget=50)
    assert net.deliveries == 50


def test_session_ids_are_recorded():
    net = Network()
    net.register("a", Sink())
    net.register("b", Sink())
    net.post("a", "b", {"kind": "x"}, "sess-1")
    net.post("a", "b", {"kind": "x"}, None)
    net.run_until_quiescent()
    assert [r.session_id for r in net.transcript.records] == ["sess-1", None]


def full_transcript():
    """A transcript exercising every body type and every section."""
    net = Network()
    net.register("a", Sink())
    net.register("b", Sink())
    kp = generate_keypair("simnet-rt")
    net.post("a", "b", {"kind": "plain", "x": 1}, "sess-1")
    net.post("a", "b", seal(encode_message({"kind": "hidden"}), kp.public_part),
             None)
    onion = wrap_onion(b"payload", [("node:x", kp.public_part)])
    net.post("b", "a", RelayMsg("flow:1", onion), "sess-1")
    net.post(
        "b", "a",
        RelayMsg("flow:2", onion, seal(b"attach", kp.public_part)),
        None,
    )
    net.post("a", "missing", {"kind": "lost"}, None)
    net.run_until_quiescent()
    t = net.transcript
    t.meta.update({"seed": 1, "scenario": "rt"})
    t.add_keys("a", kp)
    t.secrets.register("token", "tok:abc", session="sess-1", owner="a")
    t.stores["manager_retained"] = {"billing_records": []}
    t.record_alias_epoch(0, {"a": {"principal": "a", "role": "other"}})
    return t


def test_transcript_roundtrip_is_exact():
    t = full_transcript()
    text = t.to_jsonl()
    again = Transcript.from_jsonl(text)
    assert again.to_jsonl() == text
    assert again.meta["seed"] == 1
    assert len(again.records) == len(t.records)
    assert [r.kind for r in again.records] == [r.kind for r in t.records]
    assert again.key_inventory["a"][0].key_id == t.key_inventory["a"][0].key_id
    assert OBSERVER in again.key_inventory
    assert again.secrets.entries[0].value == "tok:abc"
    assert again.alias_history == t.alias_history


def test_schema_error_reports_line_numbers():
    text = full_transcript().to_jsonl()
    lines = text.splitlines()
    lines[2] = "{not json"
    with pytest.raises(SchemaError, match="line 3"):
        Transcript.from_jsonl("\n".join(lines))


def test_schema_error_on_unknown_record():
    text = full_transcript().to_jsonl()
    lines = text.splitlines()
    lines.insert(1, json.dumps({"record": "surprise"}))
    with pytest.raises(SchemaError, match="surprise"):
        Transcript.from_jsonl("\n".join(lines))


def test_schema_error_on_version_mismatch():
    text = full_transcript().to_jsonl()
    lines = text.splitlines()
    head = json.loads(lines[0])
    head["schema_version"] = 999
    lines[0] = json.dumps(head)
    with pytest.raises(SchemaError, match="schema_version"):
        Transcript.from_jsonl("\n".join(lines))


def test_schema_error_on_missing_end_marker():
    text = full_transcript().to_jsonl()
    lines = [ln for ln in text.splitlines() if '"record":"end"' not in ln]
    with pytest.raises(SchemaError, match="end marker"):
        Transcript.from_jsonl("\n".join(lines))


def test_schema_error_on_envelope_count_mismatch():
    text = full_transcript().to_jsonl()
    lines = text.splitlines()
    kept = [ln for ln in lines if '"record":"envelope"' not in ln or '"lost"' not in ln]
    assert len(kept) == len(lines) - 1
    with pytest.raises(SchemaError, match="count mismatch"):
        Transcript.from_jsonl("\n".join(kept))


def test_schema_error_on_empty_input():
    with pytest.raises(SchemaError):
        Transcript.from_jsonl("")
