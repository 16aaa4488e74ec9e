"""Sweep orchestration: train, collect panels, run PCMCI, score, persist.

Every (environment, condition, seed) run writes into its own directory

    <out>/<env>/<condition_id>/<seed>/{curves.csv, links.csv, manifest.json}

and the manifest is written last, atomically. A run whose manifest exists
and matches the current settings is loaded instead of recomputed, which
makes interrupted sweeps resumable. Wall-clock timestamps only go into
``<out>/meta.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from markovlens.errors import ConfigurationError
from markovlens.mvs import MvsConfig, compute_mvs
from markovlens.pcmci import PcmciResult, TimeSeriesPanel, aggregate_runs, run_pcmci
from markovlens.perturb import EnvRecipe
from markovlens.pipeline.config import (
    Condition, ExperimentConfig, conditions, panel_seed_for, parse_config, seed_for,
)
from markovlens.ppo import Policy, train

logger = logging.getLogger(__name__)

FINAL_EPISODES = 10
CURVE_COLUMNS = ["timestep", "episode_return", "seed", "condition_id"]
LINK_COLUMNS = ["child", "parent", "lag", "p_value", "partial_corr"]


@dataclass
class RunOutcome:
    env_name: str
    condition_id: str
    seed: int
    curve: list[tuple[int, float]]
    final_return: float
    mvs: float
    n_contributing_links: int
    var_names: list[str]
    val: np.ndarray
    p: np.ndarray
    tau_max: int
    alpha: float

    def result(self) -> PcmciResult:
        return PcmciResult(self.val, self.p, self.alpha, self.tau_max, list(self.var_names))


@dataclass
class RunFailure:
    env_name: str
    condition_id: str
    seed: int
    error: str


@dataclass
class ConditionRecord:
    env_name: str
    condition_id: str
    kind: str
    description: str
    var_names: list[str]
    runs: list[RunOutcome] = field(default_factory=list)
    failures: list[RunFailure] = field(default_factory=list)

    @property
    def final_returns(self) -> np.ndarray:
        return np.array([r.final_return for r in self.runs])

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.final_returns)) if self.runs else float("nan")

    @property
    def return_sd(self) -> float:
        return float(np.std(self.final_returns, ddof=1)) if len(self.runs) > 1 else float("nan")

    @property
    def mvs(self) -> float:
        """Mean over seeds of the per-seed aggregated MVS."""
        return float(np.mean([r.mvs for r in self.runs])) if self.runs else float("nan")

    def pooled_result(self) -> PcmciResult:
        """Seed-level results combined once more (mean val, Fisher p)."""
        return aggregate_runs([r.result() for r in self.runs])


@dataclass
class ExperimentResult:
    records: list[ConditionRecord]

    @property
    def failures(self) -> list[RunFailure]:
        return [f for r in self.records for f in r.failures]

    @property
    def ok(self) -> bool:
        return not self.failures


def collect_panel(policy: Policy, recipe: EnvRecipe, steps: int, seed: int,
                  var_names: list[str] | None = None, deterministic: bool = False) -> TimeSeriesPanel:
    """Roll out the trained policy for ``steps`` steps, resetting whenever an episode ends.

    Actions are sampled from the policy unless ``deterministic`` (mode / mean
    action). Row t is the observation the policy acted on at step t.
    """
    env = recipe.build()
    if env.obs_dim != policy.obs_dim:
        raise ConfigurationError(f"policy expects {policy.obs_dim} observation dimensions, environment emits {env.obs_dim}")
    rng = np.random.default_rng([seed, 2])  # action stream, distinct from the env and noise streams
    rows = np.zeros((steps, env.obs_dim))
    starts = [0]
    obs = env.reset(seed)
    for t in range(steps):
        rows[t] = obs
        _, env_action, _, _ = policy.act(obs, rng, deterministic=deterministic)
        out = env.step(env_action)
        if out.terminated or out.truncated:
            obs = env.reset()
            if t + 1 < steps:
                starts.append(t + 1)
        else:
            obs = out.observation
    return TimeSeriesPanel(rows, list(var_names or env.observation_labels), starts)


def _digest(config: ExperimentConfig, condition: Condition, seed: int) -> str:
    env = next(e for e in config.environments if e.name == condition.env_name)
    payload = {
        "environment": env.model_dump(mode="json"),
        "ppo": config.ppo.model_dump(mode="json"),
        "pcmci": config.pcmci.model_dump(mode="json"),
        "condition": condition.condition_id,
        "recipe": repr(condition.recipe),
        "seed": seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def run_dir(out_dir: Path, condition: Condition, seed: int) -> Path:
    return Path(out_dir) / condition.env_name / condition.condition_id / str(seed)


def execute_run(config: ExperimentConfig, condition: Condition, seed: int) -> RunOutcome:
    env = next(e for e in config.environments if e.name == condition.env_name)
    trained = train(condition.recipe, config.ppo_config(env), seed)
    settings = config.pcmci
    results = []
    for r in range(settings.runs):
        panel = collect_panel(trained.policy, condition.recipe, settings.rollout_steps, panel_seed_for(r),
                              list(condition.var_names), settings.action_mode == "deterministic")
        results.append(run_pcmci(panel, settings.tau_max, settings.alpha))
    agg = aggregate_runs(results)
    report = compute_mvs(agg, MvsConfig(tau_max=settings.tau_max, alpha_level=settings.alpha))
    return RunOutcome(
        condition.env_name, condition.condition_id, seed, list(trained.curve),
        trained.final_return(FINAL_EPISODES), report.score, report.n_contributing_links,
        list(condition.var_names), agg.val, agg.p, settings.tau_max, settings.alpha,
    )


def _write_csv(path: Path, header: list[str], rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def curve_rows(run: RunOutcome):
    return [(t, repr(float(ret)), run.seed, run.condition_id) for t, ret in run.curve]


def link_rows(result: PcmciResult, alpha: float):
    names = result.var_names
    return [(names[r["child"]], names[r["parent"]], r["lag"], repr(r["p_value"]), repr(r["partial_corr"]))
            for r in result.significant_links(alpha)]


def save_run(directory: Path, run: RunOutcome, digest: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    failure = directory / "failure.json"
    if failure.exists():
        failure.unlink()
    _write_csv(directory / "curves.csv", CURVE_COLUMNS, curve_rows(run))
    _write_csv(directory / "links.csv", LINK_COLUMNS, link_rows(run.result(), run.alpha))
    _write_json(directory / "manifest.json", {
        "digest": digest,
        "env_name": run.env_name,
        "condition_id": run.condition_id,
        "seed": run.seed,
        "final_return": run.final_return,
        "mvs": run.mvs,
        "n_contributing_links": run.n_contributing_links,
        "var_names": run.var_names,
        "tau_max": run.tau_max,
        "alpha": run.alpha,
        "val": run.val.tolist(),
        "p": run.p.tolist(),
        "curve": [[t, r] for t, r in run.curve],
    })


def load_run(directory: Path, digest: str) -> RunOutcome | None:
    path = directory / "manifest.json"
    if not path.exists():
        return None
    try:
        m = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if m.get("digest") != digest:
        logger.info("settings changed for %s; recomputing", directory)
        return None
    return RunOutcome(
        m["env_name"], m["condition_id"], m["seed"], [(int(t), float(r)) for t, r in m["curve"]],
        m["final_return"], m["mvs"], m["n_contributing_links"], m["var_names"],
        np.array(m["val"], dtype=np.float64), np.array(m["p"], dtype=np.float64), m["tau_max"], m["alpha"],
    )


def _job(config_doc: dict, env_name: str, condition_id: str, seed: int, out_dir: str):
    """Worker entry point; takes plain data so it pickles cheaply."""
    config = parse_config(config_doc)
    env = next(e for e in config.environments if e.name == env_name)
    condition = next(c for c in conditions(config, env) if c.condition_id == condition_id)
    directory = run_dir(Path(out_dir), condition, seed)
    digest = _digest(config, condition, seed)
    try:
        run = execute_run(config, condition, seed)
    except Exception as exc:  # recorded, the sweep goes on
        directory.mkdir(parents=True, exist_ok=True)
        message = f"{type(exc).__name__}: {exc}"
        _write_json(directory / "failure.json", {"error": message, "traceback": traceback.format_exc()})
        logger.error("run %s/%s/%d failed: %s", env_name, condition_id, seed, message)
        return RunFailure(env_name, condition_id, seed, message)
    save_run(directory, run, digest)
    return run


def run_experiment(config: ExperimentConfig, out_dir, parallelism: int = 1, env_filter: str | None = None,
                   seed_count: int | None = None) -> ExperimentResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_seeds = seed_count if seed_count is not None else config.seeds
    envs = [e for e in config.environments if env_filter is None or e.name == env_filter]
    if not envs:
        raise ConfigurationError(f"--env {env_filter!r} matches no configured environment")
    started = time.time()

    records: list[ConditionRecord] = []
    pending = []
    for env in envs:
        for cond in conditions(config, env):
            rec = ConditionRecord(env.name, cond.condition_id, cond.kind, cond.description, list(cond.var_names))
            records.append(rec)
            for i in range(n_seeds):
                seed = seed_for(i, n_seeds)
                done = load_run(run_dir(out_dir, cond, seed), _digest(config, cond, seed))
                if done is not None:
                    rec.runs.append(done)
                else:
                    pending.append((rec, cond, seed))
    logger.info("%d runs to compute, %d loaded from %s", len(pending), sum(len(r.runs) for r in records), out_dir)

    doc = config.model_dump(mode="json")
    args = [(doc, cond.env_name, cond.condition_id, seed, str(out_dir)) for _, cond, seed in pending]
    if parallelism > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_job, *zip(*args)))
    else:
        outcomes = [_job(*a) for a in args]
    for (rec, _, _), outcome in zip(pending, outcomes):
        if isinstance(outcome, RunFailure):
            rec.failures.append(outcome)
        else:
            rec.runs.append(outcome)
    for rec in records:
        rec.runs.sort(key=lambda r: r.seed)

    _write_json(out_dir / "meta.json", {
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "computed_runs": len(pending),
        "failed_runs": sum(len(r.failures) for r in records),
    })
    return ExperimentResult(records)
