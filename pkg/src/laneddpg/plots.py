"""Figure rendering for the report outputs (PNG files next to the CSVs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _moving_average(values, window):
    if len(values) < window:
        return np.asarray(values, dtype=float)
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def training_curves(metrics, out_path) -> Path:
    """Total reward, maneuvering steps, and critic loss over episodes."""
    episodes = [m.episode for m in metrics]
    rewards = [m.total_reward for m in metrics]
    steps = [m.maneuver_steps for m in metrics]
    losses = [m.mean_critic_loss for m in metrics]
    window = max(1, min(50, len(metrics) // 10 or 1))

    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(episodes, rewards, lw=0.4, alpha=0.4, color="tab:blue")
    smoothed = _moving_average(rewards, window)
    axes[0].plot(episodes[len(episodes) - len(smoothed):], smoothed,
                 color="tab:blue")
    axes[0].set_ylabel("total reward")
    axes[1].plot(episodes, steps, lw=0.4, alpha=0.4, color="tab:green")
    smoothed = _moving_average(steps, window)
    axes[1].plot(episodes[len(episodes) - len(smoothed):], smoothed,
                 color="tab:green")
    axes[1].set_ylabel("maneuvering steps")
    axes[2].plot(episodes, losses, lw=0.6, color="tab:red")
    axes[2].set_yscale("symlog")
    axes[2].set_ylabel("mean critic loss")
    axes[2].set_xlabel("episode")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def validation_curve(summaries, out_path) -> Path:
    """Average validation return per checkpoint."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([s.checkpoint for s in summaries],
            [s.avg_return for s in summaries], marker="o")
    ax.set_xlabel("checkpoint (episode)")
    ax.set_ylabel("average return over validation runs")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def trajectory_figure(trajectories, out_path, lane_width=3.6) -> Path:
    """Lateral position against longitudinal position per rollout."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for traj in trajectories:
        if len(traj) == 0:
            continue
        ax.plot(traj[:, 1], traj[:, 2], lw=1.0)
    for boundary in range(4):
        ax.axhline(boundary * lane_width, color="gray", lw=0.5, ls="--")
    ax.set_xlabel("longitudinal position x (m)")
    ax.set_ylabel("lateral position y (m)")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def grid_figure(results, out_path) -> Path:
    """Final-window mean return per Table-1 cell."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ok = [r for r in results if r.status == "ok"]
    labels = [f"cell {r.label}\nk={r.action_update_step}"
              f"\nD={r.replay_capacity}" for r in ok]
    ax.bar(range(len(ok)), [r.final_window_mean for r in ok],
           color="tab:blue")
    ax.set_xticks(range(len(ok)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("final-window mean return")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
