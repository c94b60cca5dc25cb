"""Evaluation metrics: damage proxies (base contact impulse, base
acceleration, joint internal forces), recovery statistics, torque
consumption and the base-height recovery profile."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# impulses below this are treated as no contact when retaining samples
IMPULSE_FLOOR = 1e-9


@dataclass
class MetricsReport:
    controller: str
    seed: int
    episodes: int
    steps: int
    control_dt: float
    task: str
    obs_config: int
    impulse_threshold: float             # N*s, reporting threshold
    impulse_samples: np.ndarray          # all nonzero per-step base impulses
    impulse_hist_edges: np.ndarray
    impulse_hist_counts: np.ndarray
    accel_mean_curve: np.ndarray         # (T,)
    accel_p95_curve: np.ndarray          # (T,)
    internal_peak_per_episode: np.ndarray  # (E,)
    internal_hist_edges: np.ndarray
    internal_hist_counts: np.ndarray
    internal_p95_curve: np.ndarray       # (T,)
    success: np.ndarray                  # (E,) bool
    torque_mean_per_drive: np.ndarray    # (J,) mean |tau|
    leg_drives: np.ndarray               # (J,) bool mask
    height_grid: np.ndarray              # (TB, HB) counts
    height_edges_t: np.ndarray
    height_edges_h: np.ndarray
    time_to_90: np.ndarray               # (E,) seconds
    episode_returns: np.ndarray          # (E,)
    value_error: float | None = None
    notes: str = ("joint internal force = revolute constraint reaction magnitude; "
                  "acceleration = raw per-step finite difference")

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))

    @property
    def torque_mean_legs(self) -> float:
        return float(np.mean(self.torque_mean_per_drive[self.leg_drives]))

    @property
    def median_time_to_90(self) -> float:
        return float(np.median(self.time_to_90))


def impulse_threshold_for(total_mass: float, reference_mass: float = 58.0,
                          reference_threshold: float = 0.05) -> float:
    """Reporting threshold scaled linearly by robot mass from the 58 kg
    reference platform's 0.05 N*s."""
    return reference_threshold * total_mass / reference_mass


def percentile_curve(samples: np.ndarray, p: float) -> np.ndarray:
    """Nearest-rank percentile across episodes at each timestep.

    `samples` is (episodes, timesteps); p in (0, 100).
    """
    if not (0.0 < p < 100.0):
        raise ValueError("percentile must lie in (0, 100)")
    if samples.size == 0:
        raise ValueError("empty sample set")
    e = samples.shape[0]
    rank = max(int(np.ceil(p / 100.0 * e)) - 1, 0)
    return np.sort(samples, axis=0)[rank]


def impulse_exceedance(report: MetricsReport, threshold: float | None = None
                       ) -> tuple[int, tuple[np.ndarray, np.ndarray]]:
    """Count and histogram of base-impulse samples above the threshold."""
    thr = report.impulse_threshold if threshold is None else threshold
    if thr <= 0:
        raise ValueError("threshold must be positive")
    kept = report.impulse_samples[report.impulse_samples > thr]
    count = int(kept.size)
    hi = float(kept.max()) if count else thr * 2
    edges = np.linspace(thr, hi, 41)
    counts, edges = np.histogram(kept, bins=edges)
    return count, (edges, counts)


def torque_comparison(report_a: MetricsReport, report_b: MetricsReport) -> dict:
    """Per-drive mean-|torque| deltas (a minus b) plus the aggregate over
    the leg drives."""
    if report_a.torque_mean_per_drive.shape != report_b.torque_mean_per_drive.shape:
        raise ValueError("reports have different drive counts")
    if report_a.seed != report_b.seed or report_a.episodes != report_b.episodes:
        raise ValueError("torque comparison requires paired evaluations (same seed and episode count)")
    delta = report_a.torque_mean_per_drive - report_b.torque_mean_per_drive
    legs = report_a.leg_drives
    return {
        "per_drive_delta": delta,
        "legs_delta": float(np.mean(delta[legs])),
        "legs_mean_a": report_a.torque_mean_legs,
        "legs_mean_b": report_b.torque_mean_legs,
    }


def recovery_profile(report: MetricsReport) -> tuple[np.ndarray, float]:
    """Base-height distribution grid over time plus the uniformity
    statistic: median over episodes of the time to stay within 90% of the
    final height."""
    return report.height_grid, report.median_time_to_90


def time_to_90_final(heights: np.ndarray, control_dt: float) -> np.ndarray:
    """Per-episode earliest time after which the base height stays at or
    above 90% of its final value."""
    final = heights[:, -1]
    below = heights < 0.9 * final[:, None]
    any_below = below.any(axis=1)
    last_below = heights.shape[1] - 1 - np.argmax(below[:, ::-1], axis=1)
    t = np.where(any_below, (last_below + 1) * control_dt, 0.0)
    return t


def height_distribution_grid(heights: np.ndarray, control_dt: float,
                             t_bins: int = 120, h_bins: int = 60
                             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e, t_len = heights.shape
    t_edges = np.linspace(0.0, t_len * control_dt, t_bins + 1)
    h_lo, h_hi = float(heights.min()), float(heights.max())
    if h_hi - h_lo < 1e-9:
        h_hi = h_lo + 1e-3
    h_edges = np.linspace(h_lo, h_hi, h_bins + 1)
    times = np.tile((np.arange(t_len) + 1) * control_dt, e)
    grid, _, _ = np.histogram2d(times, heights.ravel(), bins=(t_edges, h_edges))
    return grid, t_edges, h_edges


# --- serialization ---------------------------------------------------------------

_ARRAY_FIELDS = (
    "impulse_samples", "impulse_hist_edges", "impulse_hist_counts",
    "accel_mean_curve", "accel_p95_curve", "internal_peak_per_episode",
    "internal_hist_edges", "internal_hist_counts", "internal_p95_curve",
    "success", "torque_mean_per_drive", "leg_drives", "height_grid",
    "height_edges_t", "height_edges_h", "time_to_90", "episode_returns",
)


def report_to_json(report: MetricsReport, path: str | Path) -> None:
    doc = {
        "schema": "planarfall-metrics-v1",
        "controller": report.controller,
        "seed": report.seed,
        "episodes": report.episodes,
        "steps": report.steps,
        "control_dt": report.control_dt,
        "task": report.task,
        "obs_config": report.obs_config,
        "impulse_threshold": report.impulse_threshold,
        "value_error": report.value_error,
        "notes": report.notes,
        "success_rate": report.success_rate,
        "torque_mean_legs": report.torque_mean_legs,
        "median_time_to_90": report.median_time_to_90,
    }
    for name in _ARRAY_FIELDS:
        arr = getattr(report, name)
        doc[name] = arr.tolist()
    Path(path).write_text(json.dumps(doc))


def report_from_json(path: str | Path) -> MetricsReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != "planarfall-metrics-v1":
        raise ValueError(f"{path}: unknown report schema {doc.get('schema')!r}")
    kwargs = {k: doc[k] for k in ("controller", "seed", "episodes", "steps", "control_dt",
                                  "task", "obs_config", "impulse_threshold", "value_error",
                                  "notes")}
    for name in _ARRAY_FIELDS:
        dtype = bool if name in ("success", "leg_drives") else float
        kwargs[name] = np.asarray(doc[name], dtype=dtype)
    kwargs["impulse_hist_counts"] = kwargs["impulse_hist_counts"].astype(int)
    kwargs["internal_hist_counts"] = kwargs["internal_hist_counts"].astype(int)
    return MetricsReport(**kwargs)


def report_timeseries_csv(report: MetricsReport, path: str | Path) -> None:
    """Per-timestep curves as delimited output next to the JSON report."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "accel_mean", "accel_p95", "internal_p95"])
        for k in range(report.steps):
            w.writerow([
                f"{(k + 1) * report.control_dt:.3f}",
                repr(float(report.accel_mean_curve[k])),
                repr(float(report.accel_p95_curve[k])),
                repr(float(report.internal_p95_curve[k])),
            ])


def report_episodes_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "success", "episode_return", "peak_internal_force", "time_to_90"])
        for i in range(report.episodes):
            w.writerow([i, int(report.success[i]), repr(float(report.episode_returns[i])),
                        repr(float(report.internal_peak_per_episode[i])),
                        repr(float(report.time_to_90[i]))])
