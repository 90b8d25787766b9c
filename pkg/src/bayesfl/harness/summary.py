"""Trace and summary files.

Each seed writes ``trace_seed{seed:04d}.jsonl``: one ``{"type": "round"}``
record per round followed by a single ``{"type": "final"}`` record.
``summary.csv`` holds one row per seed and can be rebuilt from the traces
alone with :func:`summarize_traces`.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .experiments import rounds_to_threshold

SUMMARY_FIELDS = ("seed", "final_loss", "fstar", "excess", "diverged", "rounds_to_threshold")


def trace_path(out_dir, seed):
    return Path(out_dir) / f"trace_seed{seed:04d}.jsonl"


def _json_float(x):
    # JSON has no inf/nan; keep them readable and round-trippable
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _clean(obj):
    if isinstance(obj, float):
        return _json_float(obj)
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def write_trace(out_dir, result, with_aggregate=False, with_wall_time=False):
    path = trace_path(out_dir, result.seed)
    run = result.run
    with open(path, "w") as fh:
        for tr in run.traces:
            rec = {"type": "round", **tr.record(with_aggregate, with_wall_time)}
            fh.write(json.dumps(_clean(rec)) + "\n")
        final = {
            "type": "final",
            "seed": result.seed,
            "rounds": len(run.traces),
            "final_loss": run.final_loss,
            "fstar": result.fstar,
            "L": result.L,
            "gamma": result.gamma,
            "diverged": bool(run.diverged),
        }
        fh.write(json.dumps(_clean(final)) + "\n")
    return path


def read_trace(path):
    """Return ``(round_records, final_record)``; missing final raises."""
    rounds, final = [], None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "round":
                rounds.append(rec)
            elif rec["type"] == "final":
                final = rec
    if final is None:
        raise ValueError(f"{path}: no final record")
    return rounds, final


def _row(seed, losses, final_loss, fstar, diverged, threshold):
    hit = None if threshold is None else rounds_to_threshold(losses, final_loss, threshold)
    return {
        "seed": seed,
        "final_loss": final_loss,
        "fstar": fstar,
        "excess": final_loss - fstar,
        "diverged": bool(diverged),
        "rounds_to_threshold": hit,
    }


def summary_rows(results, threshold=None):
    return [
        _row(r.seed, r.run.losses, r.run.final_loss, r.fstar, r.diverged, threshold)
        for r in results
    ]


def summarize_traces(out_dir, threshold=None):
    """Rebuild the summary rows from the trace files in ``out_dir``."""
    rows = []
    for path in sorted(Path(out_dir).glob("trace_seed*.jsonl")):
        rounds, final = read_trace(path)
        losses = [float(r["loss"]) for r in rounds]
        rows.append(_row(final["seed"], losses, float(final["final_loss"]),
                         float(final["fstar"]), final["diverged"], threshold))
    return rows


def write_rows(path, rows, fields=None):
    """CSV with ``fields`` (default: union of row keys in first-seen order).

    ``None`` and missing entries are written as empty cells.
    """
    if fields is None:
        fields = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in fields})
    return path


def summary_stats(rows):
    """Mean and standard deviation of the numeric summary columns."""
    out = []
    for key in ("final_loss", "excess", "rounds_to_threshold"):
        vals = np.array([r[key] for r in rows if r[key] is not None], dtype=float)
        vals = vals[np.isfinite(vals)]
        out.append({
            "metric": key,
            "n": int(vals.size),
            "mean": float(vals.mean()) if vals.size else None,
            "std": float(vals.std(ddof=1)) if vals.size > 1 else None,
        })
    out.append({"metric": "diverged", "n": len(rows),
                "mean": float(np.mean([r["diverged"] for r in rows])) if rows else None,
                "std": None})
    return out


def write_summary(out_dir, results, threshold=None):
    rows = summary_rows(results, threshold)
    write_rows(Path(out_dir) / "summary.csv", rows, SUMMARY_FIELDS)
    stats = summary_stats(rows)
    write_rows(Path(out_dir) / "summary_stats.csv", stats, ("metric", "n", "mean", "std"))
    return rows, stats
