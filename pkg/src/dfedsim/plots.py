"""Static SVG rendering of round-record CSVs.

Pure post-processing: charts are drawn from already-written CSV files and
never touch a live run.  A multi-file bundle (several seeds of the same
experiment) is drawn as the per-round mean with a min/max band.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .engine import CSV_HEADER, records_from_csv

METRICS = ("f_avg", "grad_norm_sq", "consensus")


class SchemaMismatchError(ValueError):
    """Input CSVs do not share the round-record schema."""


def _load(csv_paths):
    series = []
    for path in csv_paths:
        with open(path) as fh:
            text = fh.read()
        first = text.splitlines()[0] if text.strip() else ""
        if first != CSV_HEADER:
            raise SchemaMismatchError(
                f"{path}: header {first!r} does not match {CSV_HEADER!r}"
            )
        series.append(records_from_csv(text))
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise SchemaMismatchError(f"CSV files have differing lengths {sorted(lengths)}")
    return series


def render_curves(csv_paths, out_dir: str, *, stem: str = "curves") -> dict:
    """Draw one metric-vs-round chart per metric, plus metric-vs-bits charts.

    Returns the plotted arrays (mean/min/max per metric) so callers can check
    the aggregation independently of the rendered SVG.
    """
    series = _load(list(csv_paths))
    os.makedirs(out_dir, exist_ok=True)
    t = np.array([r.t for r in series[0]])
    bits = np.array([r.bits_total for r in series[0]])
    plotted: dict = {"t": t, "bits": bits, "files": []}
    for metric in METRICS:
        values = np.array([[getattr(r, metric) for r in run] for run in series])
        mean = values.mean(axis=0)
        lo = values.min(axis=0)
        hi = values.max(axis=0)
        plotted[metric] = {"mean": mean, "min": lo, "max": hi}
        for xlabel, x in (("round", t), ("bits", bits)):
            fig, ax = plt.subplots(figsize=(5, 3.4))
            if len(series) > 1:
                ax.fill_between(x, lo, hi, alpha=0.25, linewidth=0)
            marker = "o" if len(t) == 1 else None
            ax.plot(x, mean, marker=marker)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(metric)
            if np.all(mean > 0):
                ax.set_yscale("log")
            fig.tight_layout()
            path = os.path.join(out_dir, f"{stem}_{metric}_vs_{xlabel}.svg")
            fig.savefig(path)
            plt.close(fig)
            plotted["files"].append(path)
    return plotted
