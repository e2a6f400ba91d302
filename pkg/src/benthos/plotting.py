"""Matplotlib figures for episodes and suites (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .mapping import OBSTACLE, TARGET  # noqa: E402

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def plot_episode(rec, world, grid, path) -> None:
    """Ground truth underlay, explored overlay and the travelled path."""
    fig, ax = plt.subplots(figsize=(6, 6))
    layer = np.zeros(grid.shape, dtype=np.int8)
    layer[grid.explored] = 1
    layer[world.target_mask()] = 2
    layer[world.target_mask() & grid.explored] = 3
    layer[world.blocking_mask() & (world.labels != world.target_label)] = 4
    cmap = ListedColormap(["#ffffff", "#b0b0b0", "#9fd89f", "#1f8a2e", "#202020"])
    extent = (0, world.width_m, 0, world.length_m)
    ax.imshow(layer, origin="lower", cmap=cmap, vmin=0, vmax=4, extent=extent, interpolation="nearest")
    xs = [world.spawn.x] + [s.pose[0] for s in rec.steps]
    ys = [world.spawn.y] + [s.pose[1] for s in rec.steps]
    ax.plot(xs, ys, "-", color="#d62728", lw=1.2)
    ax.plot(xs[0], ys[0], "o", color="#d62728", ms=5)
    ax.plot(xs[-1], ys[-1], "s", color="#d62728", ms=5)
    ax.set_title(f"{rec.env_id}  {rec.planner}  {rec.coverage_rate:.1f}%  {rec.termination}", fontsize=9)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_suite(report, path) -> None:
    """Per-environment coverage bars, one group per planner."""
    envs = list(dict.fromkeys(r["env_id"] for r in report.rows))
    planners = sorted({r["planner"] for r in report.rows})
    width = 0.8 / max(len(planners), 1)
    fig, ax = plt.subplots(figsize=(max(6, 0.55 * len(envs)), 4))
    x = np.arange(len(envs))
    for k, planner in enumerate(planners):
        cov = {r["env_id"]: r["coverage"] for r in report.rows if r["planner"] == planner}
        ax.bar(x + k * width, [cov.get(e, 0.0) for e in envs], width, label=planner)
    ax.set_xticks(x + width * (len(planners) - 1) / 2)
    ax.set_xticklabels(envs, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("coverage [%]")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
