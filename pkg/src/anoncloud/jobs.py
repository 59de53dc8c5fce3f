"""The toy job algebra the compute plane operates on.

A job is one associative operation applied to a flat list, written as
``op[item,item,...]``. Supported operations:

    sum[1,2,3]        integer addition
    min[4,1,9]        minimum (needs at least one item)
    max[4,1,9]        maximum (needs at least one item)
    concat[ab,cd]     concatenation of ascii tokens

Associativity is the point: a job can be split into contiguous chunks,
evaluated independently, and merged with the same operation without
changing the answer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EvalError, JobSyntaxError

INT_OPS = ("sum", "min", "max")
OPS = INT_OPS + ("concat",)

_JOB_RE = re.compile(r"^(?P<op>[a-z]+)\[(?P<items>[^\[\]]*)\]$")
_TOKEN_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class Job:
    op: str
    items: tuple


def parse_job(text: str) -> Job:
    """Parse a job expression, raising JobSyntaxError on malformed input."""
    m = _JOB_RE.match(text.strip())
    if not m:
        raise JobSyntaxError(f"not a job expression: {text!r}")
    op = m.group("op")
    if op not in OPS:
        raise JobSyntaxError(f"unknown operation {op!r}")
    raw = m.group("items").strip()
    parts = [p.strip() for p in raw.split(",")] if raw else []
    if any(not p for p in parts):
        raise JobSyntaxError(f"empty item in {text!r}")
    if op in INT_OPS:
        try:
            items = tuple(int(p) for p in parts)
        except ValueError as exc:
            raise JobSyntaxError(f"non-integer item in {text!r}") from exc
    else:
        for p in parts:
            if not _TOKEN_RE.match(p):
                raise JobSyntaxError(f"bad concat token {p!r}")
        items = tuple(parts)
    if op in ("min", "max") and not items:
        raise JobSyntaxError(f"{op} needs at least one item")
    return Job(op=op, items=items)


def render_job(job: Job) -> str:
    return f"{job.op}[{','.join(str(i) for i in job.items)}]"


def evaluate(job: Job) -> int | str:
    """Evaluate a job directly. sum[] is 0 and concat[] is the empty string."""
    if job.op == "sum":
        return sum(job.items, 0)
    if job.op == "min":
        if not job.items:
            raise EvalError("min of an empty list")
        return min(job.items)
    if job.op == "max":
        if not job.items:
            raise EvalError("max of an empty list")
        return max(job.items)
    if job.op == "concat":
        return "".join(job.items)
    raise EvalError(f"unknown operation {job.op!r}")


def split_items(items: tuple, n_parts: int) -> list[tuple]:
    """Split into n_parts contiguous chunks with balanced sizes.

    Chunk boundaries depend only on (len(items), n_parts), never on the
    values, so the split is deterministic.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be positive")
    size = len(items)
    return [
        items[(size * i) // n_parts : (size * (i + 1)) // n_parts]
        for i in range(n_parts)
    ]


def sub_jobs(job: Job, n_parts: int) -> list[Job]:
    """Decompose a job into independently evaluable sub-jobs.

    min and max cannot absorb empty chunks, so for them n_parts is
    clamped to the item count. The returned list may therefore be
    shorter than requested.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be positive")
    if job.op in ("min", "max"):
        n_parts = min(n_parts, len(job.items))
    return [Job(op=job.op, items=chunk) for chunk in split_items(job.items, n_parts)]


def merge_results(op: str, parts: list) -> int | str:
    """Merge sub-results with the job's own operation."""
    if op == "sum":
        return sum(parts, 0)
    if op == "min":
        if not parts:
            raise EvalError("merging min over no parts")
        return min(parts)
    if op == "max":
        if not parts:
            raise EvalError("merging max over no parts")
        return max(parts)
    if op == "concat":
        return "".join(parts)
    raise EvalError(f"unknown operation {op!r}")
