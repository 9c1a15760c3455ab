"""Optional plot emission (requires matplotlib)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_report(report, dataset, out_dir) -> list:
    """Per-horizon RMSE bars per variant, plus a route-share timeline when known."""
    plt = _plt()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    variants = sorted({r["variant"] for r in report.rows})
    for variant in variants:
        rows = report.variant_rows(variant)
        ax.plot([r["horizon"] for r in rows], [r["rmse"] for r in rows],
                marker="o", label=variant)
    ax.set_xlabel("horizon")
    ax.set_ylabel("RMSE")
    ax.set_title("per-horizon RMSE by variant")
    ax.legend()
    path = out_dir / "rmse_by_horizon.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    affected = [r for r in report.rows if r["subset"] == "affected"]
    if affected:
        fig, ax = plt.subplots(figsize=(7, 4))
        for variant in sorted({r["variant"] for r in affected}):
            rows = [r for r in affected if r["variant"] == variant]
            ax.plot([r["horizon"] for r in rows], [r["rmse"] for r in rows],
                    marker="s", label=variant)
        ax.set_xlabel("horizon")
        ax.set_ylabel("RMSE (event-affected cells)")
        ax.set_title("event-affected RMSE by variant")
        ax.legend()
        path = out_dir / "rmse_affected.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    if dataset is not None and dataset.route_shares is not None:
        fig, ax = plt.subplots(figsize=(8, 4))
        shares = dataset.route_shares
        for col in range(min(4, shares.shape[1])):
            ax.plot(shares[:, col], label=f"path {col}")
        ax.set_xlabel("interval")
        ax.set_ylabel("route share")
        ax.set_title("true route shares over time")
        ax.legend()
        path = out_dir / "route_shares.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def plot_segment_series(y: np.ndarray, predictions: dict, segment: int, out_path) -> None:
    """Observed vs predicted horizon-1 volumes on one segment."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(y, label="observed", color="black", linewidth=1.0)
    for name, series in predictions.items():
        ax.plot(series, label=name, alpha=0.8)
    ax.set_xlabel("test sample")
    ax.set_ylabel(f"volume on segment {segment}")
    ax.legend()
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
