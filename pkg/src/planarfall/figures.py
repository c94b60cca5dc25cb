"""Figure emission for evaluation reports: impulse histograms, acceleration
and internal-force curves, base-height recovery grids, and the ablation
summary table. All figures render through matplotlib to SVG files next to
the delimited report output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalrun import AblationResult
from .metrics import MetricsReport

_COLORS = {"policy": "tab:blue", "freeze": "tab:red", "damp": "tab:orange"}


def _color(name: str, i: int):
    for key, c in _COLORS.items():
        if key in name:
            return c
    return f"C{i}"


def impulse_figure(reports: list[MetricsReport], path: str | Path) -> Path:
    """Overlaid distribution of base contact impulse above the reporting
    threshold, one histogram per controller."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for i, r in enumerate(reports):
        edges, counts = r.impulse_hist_edges, r.impulse_hist_counts
        centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
        ax.step(centers, counts, where="mid", label=f"{r.controller} (n={counts.sum()})",
                color=_color(r.controller, i))
    thr = reports[0].impulse_threshold
    ax.set_xlabel(f"base contact impulse (N·s, > {thr:.3g})")
    ax.set_ylabel("samples")
    ax.set_yscale("symlog", linthresh=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def acceleration_figure(reports: list[MetricsReport], path: str | Path) -> Path:
    """Mean and 95th-percentile base acceleration against episode time."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.0), sharex=True)
    for i, r in enumerate(reports):
        t = (np.arange(r.steps) + 1) * r.control_dt
        c = _color(r.controller, i)
        axes[0].plot(t, r.accel_mean_curve, label=r.controller, color=c, lw=1.0)
        axes[1].plot(t, r.accel_p95_curve, label=r.controller, color=c, lw=1.0)
    axes[0].set_title("mean")
    axes[1].set_title("95th percentile")
    for ax in axes:
        ax.set_xlabel("time (s)")
        ax.set_ylabel("base acceleration (m/s$^2$)")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def internal_force_figure(reports: list[MetricsReport], path: str | Path) -> Path:
    """Distribution of per-episode peak joint internal force plus its
    95th-percentile curve over time."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.0))
    for i, r in enumerate(reports):
        c = _color(r.controller, i)
        edges, counts = r.internal_hist_edges, r.internal_hist_counts
        centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
        axes[0].step(centers, counts, where="mid", label=r.controller, color=c)
        t = (np.arange(r.steps) + 1) * r.control_dt
        axes[1].plot(t, r.internal_p95_curve, label=r.controller, color=c, lw=1.0)
    axes[0].set_xlabel("peak joint internal force (N)")
    axes[0].set_ylabel("episodes")
    axes[1].set_xlabel("time (s)")
    axes[1].set_ylabel("internal force p95 (N)")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def height_grid_figure(report: MetricsReport, path: str | Path) -> Path:
    """Base-height distribution over time (lighter = more episodes)."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    grid = np.asarray(report.height_grid)
    ax.imshow(grid.T, origin="lower", aspect="auto", cmap="magma",
              extent=(report.height_edges_t[0], report.height_edges_t[-1],
                      report.height_edges_h[0], report.height_edges_h[-1]))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("base height (m)")
    ax.set_title(f"{report.controller}: median t90 = {report.median_time_to_90:.2f} s",
                 fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def ablation_table(result: AblationResult) -> str:
    """Four-row observation-configuration summary in plain text."""
    rows = [f"{'config':<8}{'actor obs':<22}{'critic obs':<22}{'return':>10}{'value error':>14}"]
    layouts = {
        1: ("o_s", "o_s"),
        2: ("o_s", "o_s, o_priv, o_MDP"),
        3: ("o_s, o_eplen", "o_s, o_priv, o_MDP"),
        4: ("o_s, o_priv, o_MDP", "o_s, o_priv, o_MDP"),
    }
    for c in sorted(result.returns):
        a, cr = layouts.get(c, ("?", "?"))
        rows.append(f"{c:<8}{a:<22}{cr:<22}{result.mean_return(c):>10.2f}"
                    f"{result.mean_value_error(c):>14.5f}")
    rows.append(f"(mean of {len(result.seeds)} seeds, {result.iterations} iterations)")
    return "\n".join(rows)


def summary_table(reports: list[MetricsReport]) -> str:
    rows = [f"{'controller':<18}{'success':>9}{'impulse>thr':>13}{'mean leg |tau|':>16}"
            f"{'median t90':>12}{'value err':>11}"]
    for r in reports:
        count = int(np.sum(np.asarray(r.impulse_samples) > r.impulse_threshold))
        verr = "-" if r.value_error is None else f"{r.value_error:.4f}"
        rows.append(f"{r.controller:<18}{r.success_rate:>9.3f}{count:>13}"
                    f"{r.torque_mean_legs:>16.3f}{r.median_time_to_90:>12.2f}{verr:>11}")
    return "\n".join(rows)
