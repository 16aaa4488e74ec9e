"""Experiment config documents and their expansion into conditions.

The document lists environments with training budgets, a noise grid and
optional dimension drops. Every noise entry and every drop entry becomes
one condition next to the baseline, separately for each environment.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from markovlens.envs import ENV_NAMES, OBSERVATION_LABELS
from markovlens.errors import ConfigurationError, ContractViolation
from markovlens.perturb import ArNoiseSpec, DropSpec, EnvRecipe, GaussianNoiseSpec
from markovlens.ppo import PpoConfig

SEED_BASE = 10_000
PANEL_SEED_BASE = 20_000

DimRef = Union[int, str]
TargetDims = Union[Literal["each"], list[DimRef], None]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianEntry(_Strict):
    mean: float = 0.0
    variance: float = Field(ge=0)
    target_dims: TargetDims = None
    description: str | None = None


class ArEntry(_Strict):
    alphas: list[float] = Field(min_length=1)
    sigma: float = Field(ge=0)
    target_dims: TargetDims = None
    description: str | None = None


class NoiseStrategies(_Strict):
    gaussian: list[GaussianEntry] = Field(default_factory=list)
    auto_regressive: dict[str, list[ArEntry]] = Field(default_factory=dict)

    @field_validator("auto_regressive")
    @classmethod
    def _order_matches_label(cls, value):
        for label, entries in value.items():
            m = re.fullmatch(r"\s*AR\((\d+)\)\s*", label)
            if m is None:
                continue
            for k, entry in enumerate(entries):
                if len(entry.alphas) != int(m.group(1)):
                    raise ValueError(f"{label}[{k}]: {len(entry.alphas)} coefficients for order {m.group(1)}")
        return value


DropEntry = Union[DimRef, list[DimRef]]


class EnvironmentEntry(_Strict):
    name: str
    time_steps: int = Field(gt=0)
    observations: list[str] | None = None
    n_envs: int = 1
    drop_dimensions: list[DropEntry] | None = None

    @field_validator("name")
    @classmethod
    def _known_env(cls, value):
        if value not in ENV_NAMES:
            raise ValueError(f"unknown environment {value!r}; expected one of {list(ENV_NAMES)}")
        return value

    @field_validator("n_envs")
    @classmethod
    def _single_env(cls, value):
        if value != 1:
            raise ValueError("only n_envs = 1 is supported")
        return value


class PcmciSettings(_Strict):
    tau_max: int = Field(default=5, ge=2)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    rollout_steps: int = Field(default=2000, gt=0)
    runs: int = Field(default=5, ge=1)
    action_mode: Literal["sample", "deterministic"] = "sample"


class PpoSettings(_Strict):
    learning_rate: float = Field(default=3e-4, gt=0)
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    minibatch_size: int = Field(default=64, ge=1)
    epochs_per_update: int = Field(default=4, ge=1)
    rollout_length: int = Field(default=2048, ge=1)
    max_grad_norm: float | None = 0.5
    normalize_advantage: bool = True


class ExperimentConfig(_Strict):
    environments: list[EnvironmentEntry] = Field(min_length=1)
    noise_strategies: NoiseStrategies = Field(default_factory=NoiseStrategies)
    drop_dimensions: list[DropEntry] = Field(default_factory=list)
    seeds: int = Field(default=5, ge=1)
    pcmci: PcmciSettings = Field(default_factory=PcmciSettings)
    ppo: PpoSettings = Field(default_factory=PpoSettings)

    def ppo_config(self, env: EnvironmentEntry) -> PpoConfig:
        try:
            return PpoConfig(total_timesteps=env.time_steps, **self.ppo.model_dump())
        except ContractViolation as exc:
            raise ConfigurationError(f"ppo: {exc}") from exc


def _format_loc(loc: tuple) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in ("int", "str", "list[union[int,str]]", "literal['each']") or part.startswith(("list[", "literal[")):
            continue  # union branch tags
        else:
            out += f".{part}" if out else str(part)
    return out or "<root>"


def parse_config(text: str | bytes | dict) -> ExperimentConfig:
    """Parse and validate a config document (JSON text or an already-decoded mapping)."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a JSON object")
    try:
        config = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigurationError(f"{_format_loc(err['loc'])}: {err['msg']}") from exc
    for k, env in enumerate(config.environments):
        conditions(config, env, path=f"environments[{k}]")  # resolves every label up front
        config.ppo_config(env)
        if env.time_steps < config.ppo.rollout_length:
            raise ConfigurationError(
                f"environments[{k}].time_steps: {env.time_steps} is below the rollout length {config.ppo.rollout_length}")
    return config


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())


def seed_for(run_index: int, seed_count: int = 5) -> int:
    if not 0 <= run_index < seed_count:
        raise ContractViolation(f"run index {run_index} outside 0..{seed_count - 1}")
    return SEED_BASE + run_index


def panel_seed_for(run_index: int) -> int:
    return PANEL_SEED_BASE + run_index


@dataclass(frozen=True)
class Condition:
    env_name: str
    condition_id: str
    kind: str  # baseline | gaussian | ar | drop
    recipe: EnvRecipe
    var_names: tuple[str, ...]
    description: str = ""


def observation_names(env: EnvironmentEntry, path: str = "environment") -> list[str]:
    canonical = OBSERVATION_LABELS[env.name]
    if env.observations is None:
        return list(canonical)
    if len(env.observations) != len(canonical):
        raise ConfigurationError(
            f"{path}.observations: {env.name} has {len(canonical)} observation dimensions, got {len(env.observations)} labels")
    if len(set(env.observations)) != len(env.observations):
        raise ConfigurationError(f"{path}.observations: duplicate labels")
    return list(env.observations)


def _resolve(ref: DimRef, names: list[str], path: str) -> int:
    if isinstance(ref, int):
        if not 0 <= ref < len(names):
            raise ConfigurationError(f"{path}: index {ref} out of range for {len(names)} observation dimensions")
        return ref
    if ref in names:
        return names.index(ref)
    raise ConfigurationError(f"{path}: unknown dimension label {ref!r}; known labels {names}")


def _resolve_targets(targets: TargetDims, names: list[str], path: str) -> list[tuple[int, ...] | None]:
    """Dimension sets, one per resulting condition; None means every dimension."""
    if targets is None:
        return [None]
    if targets == "each":
        return [(i,) for i in range(len(names))]
    dims = tuple(_resolve(r, names, f"{path}[{k}]") for k, r in enumerate(targets))
    if len(set(dims)) != len(dims):
        raise ConfigurationError(f"{path}: duplicate dimensions")
    return [tuple(sorted(dims))]


def _num(x: float) -> str:
    text = f"{x:g}" if math.isfinite(x) else str(x)
    return text.replace("-", "m").replace(".", "p").replace("+", "")


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "", label) or "dim"


def _dims_suffix(dims: tuple[int, ...] | None, names: list[str]) -> str:
    if dims is None:
        return ""
    return "_on_" + "+".join(_safe(names[d]) for d in dims)


def conditions(config: ExperimentConfig, env: EnvironmentEntry, path: str = "environment") -> list[Condition]:
    names = observation_names(env, path)
    out = [Condition(env.name, "baseline", "baseline", EnvRecipe(env.name), tuple(names))]
    for k, g in enumerate(config.noise_strategies.gaussian):
        p = f"noise_strategies.gaussian[{k}].target_dims"
        for dims in _resolve_targets(g.target_dims, names, p):
            cid = f"gauss_m{_num(g.mean)}_v{_num(g.variance)}" + _dims_suffix(dims, names)
            spec = GaussianNoiseSpec(g.mean, g.variance, dims)
            out.append(Condition(env.name, cid, "gaussian", EnvRecipe(env.name, gaussian=(spec,)), tuple(names),
                                 g.description or ""))
    for label, entries in config.noise_strategies.auto_regressive.items():
        for k, a in enumerate(entries):
            p = f"noise_strategies.auto_regressive[{label!r}][{k}].target_dims"
            for dims in _resolve_targets(a.target_dims, names, p):
                cid = (f"ar{len(a.alphas)}_a" + "_".join(_num(x) for x in a.alphas)
                       + f"_s{_num(a.sigma)}" + _dims_suffix(dims, names))
                spec = ArNoiseSpec(tuple(a.alphas), a.sigma, dims)
                out.append(Condition(env.name, cid, "ar", EnvRecipe(env.name, ar=spec), tuple(names),
                                     a.description or label))
    drops = env.drop_dimensions if env.drop_dimensions is not None else config.drop_dimensions
    drop_path = f"{path}.drop_dimensions" if env.drop_dimensions is not None else "drop_dimensions"
    for k, entry in enumerate(drops):
        refs = entry if isinstance(entry, list) else [entry]
        dims = tuple(sorted({_resolve(r, names, f"{drop_path}[{k}]") for r in refs}))
        if not refs or len(dims) >= len(names) - 1:
            raise ConfigurationError(f"{drop_path}[{k}]: a drop must keep at least two observation dimensions")
        cid = "drop_" + "+".join(_safe(names[d]) for d in dims)
        kept = tuple(n for i, n in enumerate(names) if i not in dims)
        out.append(Condition(env.name, cid, "drop", EnvRecipe(env.name, drop=DropSpec(dims)), kept))
    seen: dict[str, int] = {}
    for c in out:
        if c.condition_id in seen:
            raise ConfigurationError(f"{path}: duplicate condition {c.condition_id!r}")
        seen[c.condition_id] = 1
    return out


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")
