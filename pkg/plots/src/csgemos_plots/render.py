"""Render PIT histograms, rank histograms and reliability diagrams.

Input is the verification report JSON written by the calibration toolkit
(schema ``csg-emos-report/1``); the report file is never modified.  Each
figure kind mirrors the usual forecast-verification layout: histograms
carry the uniform reference line, reliability diagrams carry the diagonal
and an inset bar chart of per-bin counts on a log10 scale with empty bins
omitted.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("pit", "rank", "reliability")

SCHEMA = "csg-emos-report/1"

_REQUIRED_ARRAYS = {
    "pit": ("pit", "n_members"),
    "rank": ("rank_counts", "n_members"),
    "reliability": ("brier", "thresholds"),
}


class ReportError(ValueError):
    """The report file is missing, malformed or lacks the requested arrays."""


@dataclass(frozen=True)
class FigureSpec:
    """One rendering job: which report, which figure, where to write it."""

    report_path: str
    kind: str
    out_path: str
    pit_bins: int | None = None  # default: rank-histogram bin count (M + 1)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ReportError(f"unknown figure kind {self.kind!r}")
        if self.pit_bins is not None and self.pit_bins < 1:
            raise ReportError("pit_bins must be a positive integer")


def load_report(path: str) -> dict:
    """Read and validate a verification report document."""
    p = Path(path)
    if not p.is_file():
        raise ReportError(f"report file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"report is not valid JSON: {exc}") from exc
    if doc.get("schema") != SCHEMA:
        raise ReportError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
    return doc


def _require(doc: dict, kind: str) -> None:
    for key in _REQUIRED_ARRAYS[kind]:
        if key not in doc or doc[key] is None:
            raise ReportError(f"report lacks {key!r}, required for {kind} figures")


def _draw_pit(doc: dict, ax, bins: int | None) -> None:
    values = np.asarray(doc["pit"], dtype=float)
    n_bins = bins if bins is not None else int(doc["n_members"]) + 1
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    ax.hist(values, bins=edges, density=True, color="#4878b0", edgecolor="white")
    ax.axhline(1.0, color="black", linestyle="--", linewidth=1.0)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("PIT value")
    ax.set_ylabel("density")
    ax.set_title(f"PIT histogram (n = {len(values)})")


def _draw_rank(doc: dict, ax) -> None:
    counts = np.asarray(doc["rank_counts"], dtype=float)
    positions = np.arange(1, counts.size + 1)
    total = counts.sum()
    ax.bar(positions, counts, color="#b04848", edgecolor="white")
    if total > 0:
        ax.axhline(total / counts.size, color="black", linestyle="--", linewidth=1.0)
    ax.set_xticks(positions)
    ax.set_xlabel("rank of observation")
    ax.set_ylabel("count")
    ax.set_title(f"Verification rank histogram (n = {int(total)})")


def _draw_reliability_panel(entry: dict, ax) -> None:
    table = entry["reliability"]
    mean_prob = np.array(
        [np.nan if v is None else v for v in table["mean_prob"]], dtype=float
    )
    obs_freq = np.array(
        [np.nan if v is None else v for v in table["obs_freq"]], dtype=float
    )
    ax.plot([0, 1], [0, 1], color="grey", linewidth=1.0)
    ax.plot(mean_prob, obs_freq, marker="o", color="#4878b0")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("mean forecast probability")
    ax.set_ylabel("observed frequency")
    ax.set_title(f"> {entry['threshold']:g} mm")

    # inset: log10 bin counts, empty bins omitted entirely
    inset = ax.inset_axes([0.08, 0.62, 0.35, 0.33])
    log_counts = table["log10_count"]
    breaks = table["breaks"]
    centers = [
        breaks[0] / 2.0,
        *((np.asarray(breaks[:-1]) + np.asarray(breaks[1:])) / 2.0),
        (breaks[-1] + 1.0) / 2.0,
    ]
    xs = [c for c, v in zip(centers, log_counts) if v is not None]
    ys = [v for v in log_counts if v is not None]
    inset.bar(xs, ys, width=0.07, color="#777777")
    inset.set_xlim(0, 1)
    inset.set_xticks([])
    inset.tick_params(axis="y", labelsize=6)
    inset.set_title("log10 count", fontsize=6)


def _draw_reliability(doc: dict, fig) -> None:
    entries = doc["brier"]
    if not entries:
        raise ReportError("report carries no reliability tables")
    n = len(entries)
    ncols = min(n, 3)
    nrows = (n + ncols - 1) // ncols
    axes = fig.subplots(nrows, ncols, squeeze=False)
    for idx, entry in enumerate(entries):
        _draw_reliability_panel(entry, axes[idx // ncols][idx % ncols])
    for idx in range(n, nrows * ncols):
        axes[idx // ncols][idx % ncols].set_axis_off()
    fig.set_size_inches(4.0 * ncols, 3.6 * nrows)


def render(spec: FigureSpec) -> str:
    """Render one figure and return the written path."""
    doc = load_report(spec.report_path)
    _require(doc, spec.kind)
    if spec.kind == "reliability":
        fig = plt.figure()
        _draw_reliability(doc, fig)
    else:
        fig, ax = plt.subplots(figsize=(5.0, 3.8))
        if spec.kind == "pit":
            _draw_pit(doc, ax, spec.pit_bins)
        else:
            _draw_rank(doc, ax)
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return spec.out_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a figure from a csg-emos verification report.",
    )
    parser.add_argument("--report", required=True, help="report JSON path")
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--pit-bins", type=int, default=None,
        help="PIT histogram bin count (default: ensemble size + 1)",
    )
    args = parser.parse_args(argv)
    try:
        render(FigureSpec(args.report, args.kind, args.out, args.pit_bins))
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
