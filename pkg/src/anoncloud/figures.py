"""Figure rendering for run reports.

Three pictures per run, written next to the delimited outputs: a message
timeline (who talked to whom, tick by tick), a knowledge chart (how many
dictionary secrets each principal can resolve), and a linkage matrix
(verdict per adversary model against its expectation).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .knowledge import knowledge
from .report import RunReport
from .simnet import Transcript

_KIND_COLORS = {
    "sealed": "#4878cf",
    "relay": "#6acc65",
    "error": "#d65f5f",
}


def _principal_of(transcript: Transcript, alias: str) -> str:
    for entry in transcript.alias_history:
        info = entry["aliases"].get(alias)
        if info is not None:
            return info["principal"]
    return alias


def timeline_figure(transcript: Transcript, path: Path) -> None:
    principals = sorted(transcript.key_inventory)
    lanes = {name: i for i, name in enumerate(principals)}
    fig, ax = plt.subplots(figsize=(10, 0.5 * max(len(lanes), 6) + 2))
    for record in transcript.records:
        src = lanes.get(_principal_of(transcript, record.frm))
        dst = lanes.get(_principal_of(transcript, record.to))
        color = _KIND_COLORS.get(record.kind, "#b5b5b5")
        if record.dead_letter:
            ax.plot(record.tick, src if src is not None else -1, "x", color="red")
            continue
        if src is None or dst is None:
            continue
        ax.annotate(
            "",
            xy=(record.tick, dst),
            xytext=(record.tick, src),
            arrowprops={"arrowstyle": "->", "color": color, "alpha": 0.7},
        )
    ax.set_yticks(list(lanes.values()))
    ax.set_yticklabels(list(lanes.keys()))
    ax.set_xlabel("tick")
    ax.set_title("message timeline")
    ax.grid(axis="x", alpha=0.2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def knowledge_figure(transcript: Transcript, path: Path) -> None:
    principals = sorted(transcript.key_inventory)
    counts = [len(knowledge(transcript, p).refs) for p in principals]
    fig, ax = plt.subplots(figsize=(8, 0.4 * len(principals) + 2))
    ax.barh(principals, counts, color="#4878cf")
    ax.set_xlabel("resolvable dictionary secrets")
    ax.set_title("per-principal knowledge")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def linkage_figure(report: RunReport, path: Path) -> None:
    rows = [(v.model, v.customer) for v in report.linkage]
    columns = ("content", "serving nodes", "payment metadata")
    fig, ax = plt.subplots(figsize=(7, 0.6 * max(len(rows), 3) + 2))
    for y, verdict in enumerate(report.linkage):
        values = (
            (verdict.content_linked, verdict.expected_content),
            (verdict.serving_nodes_linked, verdict.expected_serving),
            (verdict.payment_metadata_linked, verdict.expected_payment_metadata),
        )
        for x, (got, expected) in enumerate(values):
            face = "#6acc65" if got == expected else "#d65f5f"
            ax.add_patch(
                plt.Rectangle((x, y), 0.9, 0.9, facecolor=face, alpha=0.8)
            )
            ax.text(
                x + 0.45,
                y + 0.45,
                "linked" if got else "unlinked",
                ha="center",
                va="center",
                fontsize=8,
            )
    ax.set_xlim(0, len(columns))
    ax.set_ylim(0, max(len(rows), 1))
    ax.set_xticks([x + 0.45 for x in range(len(columns))])
    ax.set_xticklabels(columns)
    ax.set_yticks([y + 0.45 for y in range(len(rows))])
    ax.set_yticklabels([f"{m}\n{c}" for m, c in rows], fontsize=8)
    ax.invert_yaxis()
    ax.set_title("linkage verdicts (green = matches expectation)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(
    transcript: Transcript, report: RunReport, outdir: str | Path
) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [
        outdir / "timeline.png",
        outdir / "knowledge.png",
        outdir / "linkage.png",
    ]
    timeline_figure(transcript, paths[0])
    knowledge_figure(transcript, paths[1])
    linkage_figure(report, paths[2])
    return paths
