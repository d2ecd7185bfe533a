"""Figure rendering for CLI outputs.

Figures use the Agg backend and carry no timestamp or software metadata, so
rerunning a command rewrites byte-identical PNGs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_convergence(g: Sequence[float], best_g: Sequence[float], z: Sequence[float],
                     z_star: float | None, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    t = range(1, len(g) + 1)
    ax.plot(t, g, lw=0.8, alpha=0.6, label="dual value g")
    ax.plot(t, best_g, lw=1.5, label="best dual bound")
    ax.plot(t, z, lw=1.0, label="reconstructed primal")
    if z_star is not None:
        ax.axhline(z_star, color="k", ls="--", lw=1, label="integer optimum")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_simulation(traces, path: Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for tr in traces:
        if len(tr.arrivals) > 1:
            gaps = [(b - a) * 1e3 for a, b in zip(tr.arrivals, tr.arrivals[1:])]
            a1.plot(tr.arrivals[1:], gaps, lw=0.5, alpha=0.5)
        a2.plot(tr.arrivals, tr.buffer_samples, lw=0.5, alpha=0.5)
    a1.set_xlabel("time (s)")
    a1.set_ylabel("chunk inter-arrival (ms)")
    a2.set_xlabel("time (s)")
    a2.set_ylabel("buffer (s)")
    return _save(fig, path)


def plot_sweep(rows: Sequence[dict], path: Path) -> Path:
    ok = [r for r in rows if not r.get("error")]
    keys = [("qoe", "composite QoE"), ("fairness", "Jain index"), ("jitter_ms", "jitter (ms)"),
            ("startup_s", "startup (s)"), ("buffer_s", "buffer (s)"), ("optimizer_ms", "optimizer (ms)")]
    fig, axes = plt.subplots(2, 3, figsize=(11, 6))
    n = [r["users"] for r in ok]
    for ax, (k, label) in zip(axes.flat, keys):
        ax.plot(n, [r[k] for r in ok], marker="o")
        ax.set_xlabel("clients")
        ax.set_ylabel(label)
    return _save(fig, path)
