"""SVG plot emission: anticipation ribbons, phase bars, sampling envelopes,
dispersion bars. All figures render with the Agg backend and write SVG only.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_anticipation(
    path: Path,
    preds: np.ndarray,
    labels: np.ndarray,
    horizon: float,
    channel_names: list[str] | None = None,
    title: str = "",
) -> None:
    """Per-channel remaining-time curves, prediction vs label."""
    preds = np.atleast_2d(preds.T).T
    labels = np.atleast_2d(labels.T).T
    channels = preds.shape[1]
    fig, axes = plt.subplots(channels, 1, sharex=True, figsize=(10, 2.2 * channels), squeeze=False)
    x = np.arange(preds.shape[0])
    for c in range(channels):
        ax = axes[c, 0]
        ax.plot(x, labels[:, c], color="black", lw=1.0, label="label")
        ax.plot(x, preds[:, c], color="tab:blue", lw=1.2, label="prediction")
        ax.set_ylim(-0.05 * horizon, 1.1 * horizon)
        name = channel_names[c] if channel_names else f"channel {c}"
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("frame (1 FPS)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_phase_bars(path: Path, preds: np.ndarray, labels: np.ndarray, title: str = "") -> None:
    """Ground-truth and predicted phase sequences as colour bars."""
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(10, 2.4))
    for ax, seq, name in ((axes[0], labels, "label"), (axes[1], preds, "prediction")):
        ax.imshow(np.asarray(seq)[None, :], aspect="auto", interpolation="nearest", cmap="tab10")
        ax.set_yticks([0])
        ax.set_yticklabels([name])
    axes[-1].set_xlabel("frame (1 FPS)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_envelope(
    path: Path,
    agreement: dict[str, np.ndarray],
    labels: np.ndarray,
    horizon: float,
    channel_names: list[str] | None = None,
    title: str = "",
) -> None:
    """Task output against the multi-seed sampling envelope, per channel."""
    t_pred = agreement["task"]
    channels = t_pred.shape[1]
    fig, axes = plt.subplots(channels, 1, sharex=True, figsize=(10, 2.2 * channels), squeeze=False)
    x = np.arange(t_pred.shape[0])
    for c in range(channels):
        ax = axes[c, 0]
        ax.fill_between(
            x, agreement["ddim_min"][:, c], agreement["ddim_max"][:, c],
            color="tab:orange", alpha=0.3, label="sampler range",
        )
        ax.plot(x, agreement["ddim_mean"][:, c], color="tab:orange", lw=1.0, label="sampler mean")
        ax.plot(x, t_pred[:, c], color="tab:pink", lw=1.4, label="task output")
        ax.plot(x, labels[:, c], color="black", lw=0.8, ls="--", label="label")
        ax.set_ylim(-0.05 * horizon, 1.1 * horizon)
        name = channel_names[c] if channel_names else f"channel {c}"
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("frame (1 FPS)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_dispersion_bars(path: Path, stats: dict[str, float], title: str = "") -> None:
    """One bar per model label (e.g. with/without the diffusion branch)."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    names = list(stats)
    ax.bar(names, [stats[n] for n in names], color="tab:blue")
    ax.set_ylabel("mean pairwise feature distance")
    ax.grid(axis="y", alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
