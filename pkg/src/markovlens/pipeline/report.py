"""CSV and SVG reports over condition records.

Layout under the output directory, per environment:

    <env>/summary.csv                      condition_id, mean_return, return_ci95, mvs
    <env>/<condition_id>/curves.csv        every seed's episode returns
    <env>/<condition_id>/mvs.csv           per-seed MVS plus the mean row
    <env>/<condition_id>/links.csv         seed-pooled link table
    <env>/learning_curves.svg, reward_vs_mvs.svg, drop_returns.svg
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from markovlens.errors import ContractViolation
from markovlens.pipeline.runner import (
    CURVE_COLUMNS, LINK_COLUMNS, ConditionRecord, _write_csv, curve_rows, link_rows,
)

Z95 = 1.96
T95_4DF = 2.776  # two-sided 95% Student-t quantile for 5 seeds
SMOOTH_EPISODES = 10


def ci95_half_width(values: Sequence[float], multiplier: float = Z95) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float("nan")
    return float(multiplier * np.std(values, ddof=1) / math.sqrt(values.size))


def summary_rows(records: Sequence[ConditionRecord], multiplier: float = Z95):
    return [(r.condition_id, repr(r.mean_return), repr(ci95_half_width(r.final_returns, multiplier)), repr(r.mvs))
            for r in records]


def smoothed_curve(curve, grid: np.ndarray, window: int = SMOOTH_EPISODES) -> np.ndarray:
    """Trailing mean over ``window`` episodes, interpolated onto ``grid`` timesteps."""
    if not curve:
        return np.full(grid.shape, np.nan)
    t = np.array([c[0] for c in curve], dtype=np.float64)
    r = np.array([c[1] for c in curve], dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(idx - window, 0)
    smooth = (csum[idx] - csum[lo]) / (idx - lo)
    return np.interp(grid, t, smooth, left=np.nan)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "markovlens"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_learning_curves(records: Sequence[ConditionRecord], path: Path) -> None:
    plt = _pyplot()
    horizon = max((run.curve[-1][0] for r in records for run in r.runs if run.curve), default=1)
    grid = np.linspace(0, horizon, 200)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for rec in records:
        if not rec.runs:
            continue
        curves = np.array([smoothed_curve(run.curve, grid) for run in rec.runs])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # leading grid points before any episode ended
            mean = np.nanmean(curves, axis=0)
        style = {"color": "black", "linewidth": 2.0} if rec.kind == "baseline" else {"linewidth": 1.0}
        ax.plot(grid, mean, label=rec.condition_id, **style)
    ax.set_xlabel("timestep")
    ax.set_ylabel(f"episode return ({SMOOTH_EPISODES}-episode mean)")
    ax.set_title(records[0].env_name)
    ax.legend(fontsize=6, loc="best")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_reward_vs_mvs(records: Sequence[ConditionRecord], path: Path, multiplier: float = Z95) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for rec in records:
        ax.errorbar([rec.mvs], [rec.mean_return], yerr=[ci95_half_width(rec.final_returns, multiplier)],
                    fmt="o", capsize=3, color="black" if rec.kind == "baseline" else None)
        ax.annotate(rec.condition_id, (rec.mvs, rec.mean_return), fontsize=6,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("MVS")
    ax.set_ylabel("mean final return")
    ax.set_title(records[0].env_name)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_drop_returns(records: Sequence[ConditionRecord], path: Path, multiplier: float = Z95) -> None:
    plt = _pyplot()
    shown = [r for r in records if r.kind in ("baseline", "drop")]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(shown))
    ax.bar(x, [r.mean_return for r in shown],
           yerr=[ci95_half_width(r.final_returns, multiplier) for r in shown], capsize=3,
           color=["black" if r.kind == "baseline" else "tab:blue" for r in shown])
    ax.set_xticks(x)
    ax.set_xticklabels([r.condition_id for r in shown], rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("mean final return")
    ax.set_title(records[0].env_name)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def emit_report(records: Sequence[ConditionRecord], out_dir, ci_multiplier: float = Z95) -> list[Path]:
    """Write per-condition CSVs, one summary per environment and the SVG plots. Returns the written paths."""
    if not records:
        raise ContractViolation("no condition records to report")
    out_dir = Path(out_dir)
    written: list[Path] = []
    by_env: dict[str, list[ConditionRecord]] = defaultdict(list)
    for rec in records:
        by_env[rec.env_name].append(rec)
    for env_name, recs in by_env.items():
        env_dir = out_dir / env_name
        env_dir.mkdir(parents=True, exist_ok=True)
        for rec in recs:
            cdir = env_dir / rec.condition_id
            cdir.mkdir(parents=True, exist_ok=True)
            _write_csv(cdir / "curves.csv", CURVE_COLUMNS, [row for run in rec.runs for row in curve_rows(run)])
            mvs_rows = [(rec.condition_id, run.seed, repr(run.mvs), run.n_contributing_links) for run in rec.runs]
            if rec.runs:
                mvs_rows.append((rec.condition_id, "mean", repr(rec.mvs),
                                 repr(float(np.mean([run.n_contributing_links for run in rec.runs])))))
            _write_csv(cdir / "mvs.csv", ["condition_id", "seed_group", "mvs", "n_contributing_links"], mvs_rows)
            links = link_rows(rec.pooled_result(), rec.runs[0].alpha) if rec.runs else []
            _write_csv(cdir / "links.csv", LINK_COLUMNS, links)
            written += [cdir / "curves.csv", cdir / "mvs.csv", cdir / "links.csv"]
        _write_csv(env_dir / "summary.csv", ["condition_id", "mean_return", "return_ci95", "mvs"],
                   summary_rows(recs, ci_multiplier))
        written.append(env_dir / "summary.csv")
        with_runs = [r for r in recs if r.runs]
        if with_runs:
            plot_learning_curves(with_runs, env_dir / "learning_curves.svg")
            plot_reward_vs_mvs(with_runs, env_dir / "reward_vs_mvs.svg", ci_multiplier)
            written += [env_dir / "learning_curves.svg", env_dir / "reward_vs_mvs.svg"]
            if any(r.kind == "drop" for r in with_runs):
                plot_drop_returns(with_runs, env_dir / "drop_returns.svg", ci_multiplier)
                written.append(env_dir / "drop_returns.svg")
    return written
