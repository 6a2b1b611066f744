"""Matplotlib figures for the CLI report paths.

Every function draws into a fresh figure, saves it to ``path`` and closes
it. The non-interactive Agg backend is selected on import.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import DISPLAY_CLIP, PolicyGrid, PolicySlice  # noqa: E402
from .reference import GridSearchResult  # noqa: E402

__all__ = ["plot_learning_curves", "plot_policy_slices", "plot_policy_grid", "plot_grid_search"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_learning_curves(histories: Mapping[int, Sequence[dict]], reference_reward: Optional[float],
                         path) -> None:
    """Evaluation reward against episode, one line per seed."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for seed, rows in sorted(histories.items()):
        ep = np.array([r["episode"] for r in rows if np.isfinite(r["eval_reward"])])
        rw = np.array([r["eval_reward"] for r in rows if np.isfinite(r["eval_reward"])])
        if ep.size:
            ax.plot(ep, rw, lw=1.0, marker=".", ms=3, label=f"seed {seed}")
    if reference_reward is not None:
        ax.axhline(reference_reward, color="k", ls="--", lw=1.0, label="reference")
        # early episodes can be orders of magnitude worse; keep the useful range
        lo, hi = ax.get_ylim()
        span = abs(reference_reward) + 0.5
        ax.set_ylim(max(lo, reference_reward - 2.0 * span), min(hi, reference_reward + 0.5 * span))
    ax.set_xlabel("episode")
    ax.set_ylabel("mean eval reward per step")
    ax.legend(fontsize=7, ncol=2)
    _save(fig, path)


def plot_policy_slices(slices: Mapping[str, PolicySlice], path) -> None:
    """Action against predictor, one panel per position, one line per policy."""
    first = next(iter(slices.values()))
    n = len(first.positions)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), sharey=True, squeeze=False)
    for j, pi in enumerate(first.positions):
        ax = axes[0, j]
        for label, sl in slices.items():
            ax.plot(sl.predictor, np.clip(sl.actions[j], -DISPLAY_CLIP, DISPLAY_CLIP), label=label)
        ax.axhline(0.0, color="0.7", lw=0.6)
        ax.set_title(f"position {pi:g}")
        ax.set_xlabel("predictor p")
    axes[0, 0].set_ylabel("action a")
    axes[0, 0].legend(fontsize=8)
    _save(fig, path)


def plot_policy_grid(grid: PolicyGrid, path, title: str = "") -> None:
    """Heat map of the clipped action over (position, predictor)."""
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    extent = (grid.p_grid[0], grid.p_grid[-1], grid.pi_grid[0], grid.pi_grid[-1])
    im = ax.imshow(grid.clipped, origin="lower", extent=extent, aspect="auto", cmap="RdBu_r",
                   vmin=-DISPLAY_CLIP, vmax=DISPLAY_CLIP)
    fig.colorbar(im, ax=ax, label="action a")
    ax.set_xlabel("predictor p")
    ax.set_ylabel("position pi")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_grid_search(result: GridSearchResult, path, param_name: str = "param") -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(result.grid, result.values, ".-", lw=0.8, ms=3, label="mean reward")
    if result.pnl is not None:
        ax.plot(result.grid, result.pnl, ".-", lw=0.8, ms=3, label="mean pnl")
    ax.axvline(result.best_param, color="k", ls=":", lw=1.0)
    ax.set_xlabel(param_name)
    ax.set_ylabel("per-step value")
    ax.legend(fontsize=8)
    _save(fig, path)
