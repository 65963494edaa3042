"""Figure rendering for the report path.

Everything draws through the Agg backend and writes straight to files, so
reports work on headless machines.  Functions take plain arrays or trace
objects; nothing here touches the experiment layout on disk.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from symchain.metrics import EpisodeTrace


def save_learning_curves(per_policy: dict[str, list[np.ndarray]], path, title: str = "") -> None:
    """Mean learning curve per policy with a +-1 std band across seeds.

    ``per_policy`` maps policy id to one reward series per seed; series are
    truncated to the shortest seed so the band is well defined everywhere.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    for pid, seed_series in sorted(per_policy.items()):
        n = min(len(s) for s in seed_series)
        stacked = np.stack([np.asarray(s)[:n] for s in seed_series])
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        x = np.arange(n)
        ax.plot(x, mean, label=pid)
        ax.fill_between(x, mean - std, mean + std, alpha=0.25)
    ax.set_xlabel("training iteration")
    ax.set_ylabel("mean episode reward")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trace_panels(trace: EpisodeTrace, path, title: str = "") -> None:
    """Inventory, ordering, and penalty-event panels for one episode."""
    t = trace.column("t")
    fig, axes = plt.subplots(3, 1, figsize=(9.0, 7.2), sharex=True)

    axes[0].plot(t, trace.column("retailer_inventory"), label="retailer inventory")
    axes[0].plot(t, trace.column("factory_inventory"), label="factory inventory")
    axes[0].set_ylabel("units on hand")
    axes[0].legend(loc="upper right")

    axes[1].plot(t, trace.column("demand"), label="customer demand", linestyle="--")
    axes[1].plot(t, trace.column("retailer_order"), label="retailer order")
    axes[1].plot(t, trace.column("factory_order"), label="factory order")
    axes[1].set_ylabel("units ordered")
    axes[1].legend(loc="upper right")

    axes[2].plot(t, trace.column("retailer_stockout"), label="retailer stockout")
    axes[2].plot(t, trace.column("factory_stockout"), label="factory stockout")
    axes[2].plot(t, trace.column("retailer_backlog"), label="retailer backlog")
    axes[2].plot(t, trace.column("factory_backlog"), label="factory backlog")
    axes[2].set_ylabel("penalized units")
    axes[2].set_xlabel("step")
    axes[2].legend(loc="upper right")

    if title:
        axes[0].set_title(title)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_price_comparison(labels: list[str], retailer_prices: list[float], factory_prices: list[float], path) -> None:
    """Grouped bars of mean sale prices per experiment cell."""
    x = np.arange(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(labels)), 4.2))
    ax.bar(x - width / 2, retailer_prices, width, label="retailer price")
    ax.bar(x + width / 2, factory_prices, width, label="factory price")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("mean sale price")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
