"""Report rendering: delimited tables plus matplotlib figures.

Every CLI command that produces a report writes the machine-readable
file(s) and, next to them, a PNG rendering of the same data.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import NoiseExperimentReport, QualityReport, ScatterRow
from .ioutil import atomic_write_text, fmt17
from .metrics import LayerDelta


def _write_csv(path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt17(v) if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buf.getvalue())


# -- scatter (NOD-DON plane) ----------------------------------------------


def write_scatter_csv(path, rows: Sequence[ScatterRow]) -> None:
    _write_csv(
        path,
        ["sample_id", "don", "nod", "topsis_score", "selected"],
        ((r.sample_id, r.don, r.nod, r.topsis_score, r.selected) for r in rows),
    )


def plot_scatter(path, rows: Sequence[ScatterRow], title: str = "sample distribution") -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for flag, color, label in ((0, "tab:gray", "rejected"), (1, "tab:red", "selected")):
        xs = [r.nod for r in rows if r.selected == flag]
        ys = [r.don for r in rows if r.selected == flag]
        if xs:
            ax.scatter(xs, ys, s=12, alpha=0.6, c=color, label=label, edgecolors="none")
    ax.set_xlabel("NOD (weight displacement)")
    ax.set_ylabel("DON (norm decrease)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_score_curve(path, scores: Sequence[float], title: str = "ranked scores") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(scores) + 1), scores, lw=1.2)
    ax.set_xlabel("rank")
    ax.set_ylabel("score")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


# -- layer ranking ---------------------------------------------------------


def write_layers_csv(path, deltas: Sequence[LayerDelta]) -> None:
    _write_csv(
        path,
        ["layer_name", "norm_before", "norm_after", "nod", "norm_gap"],
        ((d.layer_name, d.norm_before, d.norm_after, d.nod, d.norm_gap) for d in deltas),
    )


def plot_layer_deltas(path, deltas: Sequence[LayerDelta]) -> None:
    fig, ax = plt.subplots(figsize=(6, 0.6 * max(4, len(deltas))))
    names = [d.layer_name for d in deltas][::-1]
    values = [d.nod for d in deltas][::-1]
    ax.barh(names, values, color="tab:blue")
    ax.set_xlabel("Frobenius norm of weight delta")
    ax.set_title("layers ranked by weight displacement")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


# -- noise experiment --------------------------------------------------------


def write_nod_shift_csv(path, report: NoiseExperimentReport) -> None:
    _write_csv(
        path,
        ["sample_id", "nod_clean", "nod_corrupted"],
        report.nod_pairs,
    )


def plot_nod_shift(path, report: NoiseExperimentReport) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [p[1] for p in report.nod_pairs]
    ys = [p[2] for p in report.nod_pairs]
    ax.scatter(xs, ys, s=14, alpha=0.7, c="tab:red", edgecolors="none")
    lim = max(xs + ys) * 1.05 if xs else 1.0
    ax.plot([0, lim], [0, lim], ls="--", c="gray", lw=1, label="no change")
    ax.set_xlabel("NOD before corruption")
    ax.set_ylabel("NOD after corruption")
    ax.set_title(f"corruption pushes NOD up (overlap {report.overlap.overlap:.3f})")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def noise_report_doc(report: NoiseExperimentReport) -> dict:
    return {
        "overlap": {
            "set_a_size": report.overlap.set_a_size,
            "set_b_size": report.overlap.set_b_size,
            "intersection": report.overlap.intersection,
            "overlap": report.overlap.overlap,
        },
        "mean_nod_clean": report.mean_nod_clean,
        "mean_nod_corrupted": report.mean_nod_corrupted,
        "mean_nod_shift": report.mean_nod_shift,
        "clean_selected": list(report.clean_selected),
        "corrupted_selected": list(report.corrupted_selected),
        "missing_after_corruption": list(report.missing_after_corruption),
        "nod_pairs": [[sid, a, b] for sid, a, b in report.nod_pairs],
    }


# -- quality experiment --------------------------------------------------------


def write_quality_csv(path, report: QualityReport) -> None:
    _write_csv(
        path,
        ["method", "seed", "n_selected", "heldout_loss"],
        ((r.method, r.seed, r.n_selected, r.heldout_loss) for r in report.rows),
    )


def write_quality_summary_csv(path, report: QualityReport) -> None:
    _write_csv(
        path,
        ["method", "mean_heldout_loss", "std", "n_seeds"],
        (
            (m, s["mean"], s["std"], s["n_seeds"])
            for m, s in report.summary.items()
        ),
    )


def plot_quality(path, report: QualityReport) -> None:
    methods = list(report.summary)
    means = [report.summary[m]["mean"] for m in methods]
    stds = [report.summary[m]["std"] for m in methods]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(methods, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_ylabel("held-out cross-entropy")
    ax.set_title(f"subset quality at ratio {report.ratio:g}")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def quality_report_doc(report: QualityReport) -> dict:
    return {
        "ratio": report.ratio,
        "summary": {
            m: {"mean": s["mean"], "std": s["std"], "n_seeds": s["n_seeds"]}
            for m, s in report.summary.items()
        },
        "rows": [
            {
                "method": r.method,
                "seed": r.seed,
                "n_selected": r.n_selected,
                "heldout_loss": r.heldout_loss,
            }
            for r in report.rows
        ],
    }
