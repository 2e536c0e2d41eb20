"""Scores, repetition accounting, state coverage and CSV emission."""
from __future__ import annotations

import csv
import io

import numpy as np

METRIC_COLUMNS = ("frame", "mean_return", "std_return", "n_score", "repetition_pct", "alpha_prime",
                  "alpha_dblprime", "entropy_switch", "entropy_action", "n_score_ema")
EMA_FACTOR = 0.9
GRID = 50


def n_score(z, z0, z1):
    """``(z - z0) / (z1 - z0)``, unclipped."""
    if z1 == z0:
        raise ValueError("degenerate score range: best and random scores are equal")
    return (np.asarray(z, dtype=np.float64) - z0) / (z1 - z0)


def n_auc(curve):
    """Mean n-score over a curve given as ``(frame, n_score)`` pairs or bare scores."""
    vals = [c[1] if isinstance(c, (tuple, list)) else c for c in curve]
    if not vals:
        raise ValueError("n-AUC of an empty curve")
    return float(np.mean(vals))


def repetition_percentage(episodes):
    """Fraction of steps with ``b == 0`` over a set of per-episode switch sequences."""
    total = repeats = 0
    for bits in episodes:
        bits = np.asarray(bits)
        total += bits.size
        repeats += int(np.sum(bits == 0))
    return repeats / total if total else float("nan")


def ema(values, factor=EMA_FACTOR):
    out, acc = [], None
    for v in values:
        acc = v if acc is None else factor * acc + (1.0 - factor) * v
        out.append(acc)
    return out


def fmt(x):
    """Shortest round-tripping text for a float (stable across runs)."""
    x = float(x)
    return "nan" if x != x else repr(x)


class MetricsWriter:
    """Appends evaluation rows to a CSV file, flushing after every row."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(METRIC_COLUMNS)
        self._fh.flush()
        self._ema = None
        self.rows = []

    def write(self, row: dict):
        s = row["n_score"]
        if s == s:
            self._ema = s if self._ema is None else EMA_FACTOR * self._ema + (1 - EMA_FACTOR) * s
        row = dict(row, n_score_ema=self._ema if self._ema is not None else float("nan"))
        self.rows.append(row)
        self._w.writerow([str(int(row[c])) if c == "frame" else fmt(row[c]) for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()


# -- state coverage -------------------------------------------------------------
def coverage_summary(states, low, high, dims=(0, 1)):
    """Per-dimension min/max/std and occupancy of a 50x50 grid over two state dimensions."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("coverage needs a non-empty (steps, dim) state log")
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    d0, d1 = dims if states.shape[1] > 1 else (0, 0)
    ij = []
    for d in (d0, d1):
        t = (states[:, d] - low[d]) / (high[d] - low[d])
        ij.append(np.clip(np.floor(t * GRID).astype(np.int64), 0, GRID - 1))
    cells = np.unique(ij[0] * GRID + ij[1])
    # shifting by the first row keeps a constant log at exactly zero spread
    return {
        "min": states.min(axis=0), "max": states.max(axis=0), "std": (states - states[0]).std(axis=0),
        "occupied_cells": int(cells.size), "occupancy": cells.size / float(GRID * GRID),
    }


def write_coverage_csv(path, states, low, high, dims=(0, 1)):
    """Summary block (``# key,...`` comment rows) followed by one row per logged state."""
    summary = coverage_summary(states, low, high, dims)
    states = np.asarray(states, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for key in ("min", "max", "std"):
        w.writerow([f"# {key}"] + [fmt(v) for v in summary[key]])
    w.writerow(["# occupied_cells", summary["occupied_cells"]])
    w.writerow(["# occupancy", fmt(summary["occupancy"])])
    w.writerow(["step"] + [f"s{i}" for i in range(states.shape[1])])
    for i, row in enumerate(states):
        w.writerow([i] + [fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    return summary
