import pytest
from hypothesis import given, strategies as st

from anoncloud.errors import EvalError, JobSyntaxError
from anoncloud.jobs import (
    OPS,
    Job,
    evaluate,
    merge_results,
    parse_job,
    render_job,
    split_items,
    sub_jobs,
)

# Reference results computed by hand / plain Python, independent of the
# implementation under test.
FROZEN = [
    ("sum[3,1,4,1,5,9,2,6]", 31),
    ("sum[]", 0),
    ("sum[-5,5]", 0),
    ("min[10,5,20]", 5),
    ("max[10,5,20]", 20),
    ("min[-3]", -3),
    ("concat[ab,cd,ef]", "abcdef"),
    ("concat[]", ""),
    ("concat[x]", "x"),
]


@pytest.mark.parametrize("text,expected", FROZEN)
def test_frozen_values(text, expected):
    assert evaluate(parse_job(text)) == expected


@pytest.mark.parametrize("text,expected", FROZEN)
def test_render_roundtrip(text, expected):
    job = parse_job(text)
    again = parse_job(render_job(job))
    assert again == job
    assert evaluate(again) == expected


@pytest.mark.parametrize("op", ["min", "max"])
def test_empty_extremum_is_an_error(op):
    with pytest.raises(EvalError):
        evaluate(Job(op, ()))


@pytest.mark.parametrize(
    "bad",
    [
        "",
        "sum",
        "sum[1,2",
        "frobnicate[1]",
        "sum[1,,2]",
        "sum[1,x]",
        "min[]",
        "max[]",
        "concat[a b]",
        "concat[a,b!]",
        "sum[1]extra",
    ],
)
def test_malformed_jobs_rejected(bad):
    with pytest.raises(JobSyntaxError):
        parse_job(bad)


def test_job_syntax_error_is_an_eval_error():
    assert issubclass(JobSyntaxError, EvalError)


def test_split_is_contiguous_and_balanced():
    items = tuple(range(10))
    chunks = split_items(items, 3)
    assert len(chunks) == 3
    assert tuple(x for chunk in chunks for x in chunk) == items
    sizes = [len(c) for c in chunks]
    assert max(sizes) - min(sizes) <= 1


def test_split_more_parts_than_items():
    chunks = split_items((1, 2), 5)
    assert len(chunks) == 5
    assert tuple(x for chunk in chunks for x in chunk) == (1, 2)


def test_sub_jobs_clamped_for_extrema():
    job = parse_job("min[4,2]")
    subs = sub_jobs(job, 5)
    assert len(subs) == 2
    assert all(s.items for s in subs)


ints = st.lists(st.integers(-1000, 1000), max_size=32).map(tuple)
tokens = st.lists(
    st.text(alphabet="ab_.-019", min_size=1, max_size=4), max_size=32
).map(tuple)


@given(items=ints, op=st.sampled_from(["sum", "min", "max"]), n=st.integers(1, 8))
def test_split_merge_matches_direct_eval_int(items, op, n):
    if op in ("min", "max") and not items:
        return
    job = Job(op, items)
    parts = [evaluate(s) for s in sub_jobs(job, n)]
    assert merge_results(op, parts) == evaluate(job)


@given(items=tokens, n=st.integers(1, 8))
def test_split_merge_matches_direct_eval_concat(items, n):
    job = Job("concat", items)
    parts = [evaluate(s) for s in sub_jobs(job, n)]
    assert merge_results(op="concat", parts=parts) == evaluate(job)


def test_ops_catalogue():
    assert set(OPS) == {"sum", "min", "max", "concat"}
