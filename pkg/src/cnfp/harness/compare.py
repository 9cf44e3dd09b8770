"""Aggregate per-seed metric files into plot-ready tables."""
from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np

COLUMNS = ("return", "violations_obstacle", "violations_battery")


class MetricsFileError(ValueError):
    pass


def load_metrics(path):
    """Read a metrics.csv into a dict of column arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise MetricsFileError(f"{path} has no episodes")
    missing = {"episode", *COLUMNS} - set(rows[0])
    if missing:
        raise MetricsFileError(f"{path} lacks columns {sorted(missing)}")
    out = {"episode": np.array([int(r["episode"]) for r in rows])}
    for col in COLUMNS:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def run_label(path):
    """Variant name for a metrics file: from the sibling summary.json if any."""
    summary = Path(path).parent / "summary.json"
    if summary.exists():
        with open(summary) as fh:
            return json.load(fh).get("variant", "runs")
    return "runs"


def aggregate(runs):
    """Per-episode mean and sample std across ``runs``.

    Runs of unequal length are cut to the shortest one, with a warning.
    """
    lengths = [len(r["episode"]) for r in runs]
    n = min(lengths)
    if len(set(lengths)) > 1:
        warnings.warn(f"runs have different lengths {lengths}; truncating to {n} episodes")
    table = {"episode": np.arange(n), "n_runs": len(runs)}
    for col in COLUMNS:
        stack = np.stack([r[col][:n] for r in runs])
        table[f"{col}_mean"] = stack.mean(axis=0)
        table[f"{col}_std"] = stack.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros(n)
    return table


def final_return(runs, fraction=0.1):
    """Mean return over the last ``fraction`` of episodes, averaged over runs."""
    n = min(len(r["return"]) for r in runs)
    k = max(1, int(round(fraction * n)))
    return float(np.mean([r["return"][n - k:n].mean() for r in runs]))


def compare(paths, fraction=0.1):
    """Group metric files by variant and aggregate each group.

    Returns ``(tables, summary)``; ``summary`` holds each group's final return
    and, when both are present, the gap between the constrained flow policy
    and the unconstrained baseline relative to the baseline.
    """
    if not paths:
        raise MetricsFileError("no metrics files given")
    groups = {}
    for p in paths:
        groups.setdefault(run_label(p), []).append(load_metrics(p))
    tables = {label: aggregate(runs) for label, runs in groups.items()}
    summary = {label: {"runs": len(runs), "final_return": final_return(runs, fraction),
                       "total_violations": [int(sum(r[c].sum() for r in runs)) for c in COLUMNS[1:]]}
               for label, runs in groups.items()}
    if "cnfp" in summary and "unconstrained" in summary:
        ref = summary["unconstrained"]["final_return"]
        gap = summary["cnfp"]["final_return"] - ref
        summary["gap"] = {"absolute": gap, "relative": abs(gap) / abs(ref) if ref else float("inf")}
    return tables, summary


def write_tables(tables, fh):
    """Long-format CSV, one row per (variant, episode)."""
    header = ["variant", "episode", "n_runs"] + [f"{c}_{s}" for c in COLUMNS for s in ("mean", "std")]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for label, t in tables.items():
        for i in range(len(t["episode"])):
            writer.writerow([label, i, t["n_runs"]] + [repr(float(t[h][i])) for h in header[3:]])
