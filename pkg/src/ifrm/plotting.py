"""Render benchmark figures next to the CSV they come from.

matplotlib is imported lazily with the Agg backend so that importing
this module (or the package) never requires a display.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict


def _load_rows(csv_path: str) -> dict[str, list[dict]]:
    by_mode: dict[str, list[dict]] = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_mode[row["mode"]].append(
                {
                    "payload_size": int(row["payload_size"]),
                    "median_ns": int(row["median_ns"]),
                    "min_ns": int(row["min_ns"]),
                    "p99_ns": int(row["p99_ns"]),
                    "msgs_per_sec": float(row["msgs_per_sec"]),
                }
            )
    for rows in by_mode.values():
        rows.sort(key=lambda r: r["payload_size"])
    return by_mode


def render_report(csv_path: str, out_dir: str | None = None) -> list[str]:
    """Write <stem>_latency.png and <stem>_rate.png; returns their paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_mode = _load_rows(csv_path)
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    target_dir = out_dir if out_dir is not None else os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(target_dir, exist_ok=True)
    outputs = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for mode, rows in sorted(by_mode.items()):
        xs = [r["payload_size"] for r in rows]
        ax.plot(xs, [r["median_ns"] / 1e3 for r in rows], marker="o", label=f"{mode} median")
        ax.fill_between(
            xs,
            [r["min_ns"] / 1e3 for r in rows],
            [r["p99_ns"] / 1e3 for r in rows],
            alpha=0.2,
        )
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("payload size (bytes)")
    ax.set_ylabel("per-message time (us)")
    ax.set_title("message time vs payload size (band: min to p99)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(target_dir, f"{stem}_latency.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    outputs.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for mode, rows in sorted(by_mode.items()):
        xs = [r["payload_size"] for r in rows]
        ax.plot(xs, [r["msgs_per_sec"] for r in rows], marker="s", label=mode)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("payload size (bytes)")
    ax.set_ylabel("messages / second")
    ax.set_title("message rate vs payload size")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(target_dir, f"{stem}_rate.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    outputs.append(path)

    return outputs
