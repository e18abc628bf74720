"""Figure rendering for the report-producing CLI paths.

Every delimited report gets a PNG next to it with the same stem. All
rendering goes through the Agg backend so the CLI works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def history_figure(history, path) -> None:
    """Training loss and validation angle error over epochs."""
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in history], marker="o",
            label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    twin = ax.twinx()
    twin.plot(epochs, [r.val_mpjae for r in history], marker="s",
              color="tab:orange", label="val MPJAE")
    twin.set_ylabel("val MPJAE (deg)")
    ax.set_title("training history")
    _finish(fig, path)


def per_joint_figure(report, path) -> None:
    """Per-joint angle error split into total, swing, twist bars."""
    n = len(report.joints)
    idx = np.arange(n)
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * n), 4))
    width = 0.28
    per = report.per_joint
    ax.bar(idx - width, per[:, 0], width, label="total")
    ax.bar(idx, per[:, 1], width, label="swing")
    ax.bar(idx + width, per[:, 2], width, label="twist")
    ax.set_xticks(idx)
    ax.set_xticklabels(report.joints, rotation=75, ha="right", fontsize=7)
    ax.set_ylabel("angle error (deg)")
    ax.legend()
    ax.set_title("per-joint angle error")
    _finish(fig, path)


def budget_figure(rows, path) -> None:
    """Position error versus iteration budget, one line per solver."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for solver in sorted({r["solver"] for r in rows}):
        sub = [r for r in rows if r["solver"] == solver]
        its = [r["iteration"] for r in sub]
        err = [r["mpjpe_mm"] for r in sub]
        if solver == "model":
            ax.axhline(err[0], color="tab:green", linestyle="--",
                       label="model (1 pass)")
        else:
            ax.plot(its, err, marker="o", label=solver)
    ax.set_xscale("log")
    ax.set_xlabel("iterations")
    ax.set_ylabel("MPJPE (mm)")
    ax.legend()
    ax.set_title("error versus iteration budget")
    _finish(fig, path)


def noise_figure(rows, path) -> None:
    """Aggregate error curves against input noise level."""
    sig = [r["sigma_mm"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].plot(sig, [r["mpjae"] for r in rows], marker="o", label="MPJAE")
    axes[0].plot(sig, [r["swing"] for r in rows], marker="s", label="swing")
    axes[0].plot(sig, [r["twist"] for r in rows], marker="^", label="twist")
    axes[0].set_xlabel("noise sigma (mm)")
    axes[0].set_ylabel("angle error (deg)")
    axes[0].legend()
    axes[1].plot(sig, [r["mpjpe"] for r in rows], marker="o", label="MPJPE")
    axes[1].plot(sig, [r["p_mpjpe"] for r in rows], marker="s",
                 label="P-MPJPE")
    axes[1].set_xlabel("noise sigma (mm)")
    axes[1].set_ylabel("position error (mm)")
    axes[1].legend()
    fig.suptitle("robustness to input noise")
    _finish(fig, path)


def grid_figure(joint_names, sigmas, grid, title, path) -> None:
    """Heatmap of a per-joint error grid over noise levels."""
    fig, ax = plt.subplots(figsize=(6, max(4, 0.25 * len(joint_names))))
    im = ax.imshow(np.asarray(grid), aspect="auto", cmap="viridis")
    ax.set_xticks(np.arange(len(sigmas)))
    ax.set_xticklabels([f"{s:g}" for s in sigmas])
    ax.set_yticks(np.arange(len(joint_names)))
    ax.set_yticklabels(joint_names, fontsize=7)
    ax.set_xlabel("noise sigma (mm)")
    fig.colorbar(im, ax=ax, label="deg")
    ax.set_title(title)
    _finish(fig, path)


def bench_figure(rows, path) -> None:
    """Throughput against batch size."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["batch_size"] for r in rows], [r["fps"] for r in rows],
            marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size")
    ax.set_ylabel("frames per second")
    ax.set_title("inference throughput")
    _finish(fig, path)


def flow_figure(joint_names, flow, path) -> None:
    """Heatmap of mean attention flow, receivers down the rows."""
    n = len(joint_names)
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * n), max(5, 0.3 * n)))
    im = ax.imshow(np.asarray(flow), cmap="magma")
    ax.set_xticks(np.arange(n))
    ax.set_xticklabels(joint_names, rotation=90, fontsize=6)
    ax.set_yticks(np.arange(n))
    ax.set_yticklabels(joint_names, fontsize=6)
    ax.set_xlabel("source joint")
    ax.set_ylabel("receiving joint")
    fig.colorbar(im, ax=ax)
    ax.set_title("attention flow")
    _finish(fig, path)
