"""Observation perturbations: i.i.d. Gaussian noise, AR(p) noise, dimension dropping.

Perturbations only touch the emitted observation. Dynamics, rewards and
termination always come from the wrapped environment's true state. Noise
is applied first, so noise specs index the full observation vector; the
drop set is removed afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from markovlens.envs import ActionSpace, ClassicControlEnv, StepOutcome, make_env
from markovlens.errors import ConfigurationError

logger = logging.getLogger(__name__)

_warned_alphas: set[tuple[float, ...]] = set()  # warn once per process for each non-stationary AR spec


def _check_dims(dims: Sequence[int], obs_dim: int, what: str) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(set(dims)) != len(dims):
        raise ConfigurationError(f"{what}: duplicate dimension indices {list(dims)}")
    bad = [d for d in dims if not 0 <= d < obs_dim]
    if bad:
        raise ConfigurationError(f"{what}: dimension index {bad[0]} out of range for observation dimension {obs_dim}")
    return dims


@dataclass(frozen=True)
class GaussianNoiseSpec:
    mean: float = 0.0
    variance: float = 0.0
    target_dims: tuple[int, ...] | None = None  # None: every dimension

    def __post_init__(self):
        if not self.variance >= 0:
            raise ConfigurationError(f"gaussian noise variance must be >= 0, got {self.variance}")

    def dims_for(self, obs_dim: int) -> tuple[int, ...]:
        if self.target_dims is None:
            return tuple(range(obs_dim))
        return _check_dims(self.target_dims, obs_dim, "gaussian noise")


@dataclass(frozen=True)
class ArNoiseSpec:
    alphas: tuple[float, ...]
    sigma: float
    target_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.alphas) == 0:
            raise ConfigurationError("AR noise needs at least one coefficient")
        if not self.sigma >= 0:
            raise ConfigurationError(f"AR noise sigma must be >= 0, got {self.sigma}")

    @property
    def order(self) -> int:
        return len(self.alphas)

    def dims_for(self, obs_dim: int) -> tuple[int, ...]:
        if self.target_dims is None:
            return tuple(range(obs_dim))
        return _check_dims(self.target_dims, obs_dim, "AR noise")


@dataclass(frozen=True)
class ArState:
    """Last p values of the hidden process, most recent first."""

    history: np.ndarray

    @classmethod
    def zeros(cls, order: int) -> "ArState":
        return cls(np.zeros(order))


@dataclass(frozen=True)
class DropSpec:
    dropped_dims: tuple[int, ...] = ()

    def validate(self, obs_dim: int) -> tuple[int, ...]:
        dims = _check_dims(self.dropped_dims, obs_dim, "dimension drop")
        if obs_dim - len(dims) < 1:
            raise ConfigurationError("dimension drop would remove every observation dimension")
        return dims


def gaussian_perturb(obs: np.ndarray, spec: GaussianNoiseSpec, rng: np.random.Generator) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    dims = list(spec.dims_for(obs.shape[0]))
    out = obs.copy()
    if dims:
        out[dims] += rng.normal(spec.mean, np.sqrt(spec.variance), size=len(dims))
    return out


def ar_advance(state: ArState, spec: ArNoiseSpec, rng: np.random.Generator) -> tuple[ArState, float]:
    """One step of z_{t+1} = sum_l alpha_l * z_{t-l} + eps, eps ~ N(0, sigma^2)."""
    if state.history.shape[0] != spec.order:
        raise ConfigurationError(f"AR history length {state.history.shape[0]} != order {spec.order}")
    eps = rng.normal(0.0, spec.sigma)
    z = float(np.dot(spec.alphas, state.history) + eps)
    history = np.concatenate(([z], state.history[:-1]))
    return ArState(history), z


def ar_perturb(obs: np.ndarray, z: float, spec: ArNoiseSpec) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    out = obs.copy()
    out[list(spec.dims_for(obs.shape[0]))] += z
    return out


def drop_dims(obs: np.ndarray, spec: DropSpec) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    dims = spec.validate(obs.shape[0])
    keep = [i for i in range(obs.shape[0]) if i not in dims]
    return obs[keep]


@dataclass(frozen=True)
class EnvRecipe:
    """Everything needed to rebuild a (possibly perturbed) environment."""

    env_name: str
    gaussian: tuple[GaussianNoiseSpec, ...] = ()
    ar: ArNoiseSpec | None = None
    drop: DropSpec = field(default_factory=DropSpec)

    def build(self) -> "PerturbedEnv":
        return PerturbedEnv(make_env(self.env_name), self.gaussian, self.ar, self.drop)


class PerturbedEnv:
    """Environment handle whose observations pass through the configured perturbations."""

    def __init__(
        self,
        env: ClassicControlEnv,
        gaussian: Sequence[GaussianNoiseSpec] = (),
        ar: ArNoiseSpec | None = None,
        drop: DropSpec | None = None,
    ):
        self.env = env
        self.gaussian = tuple(gaussian)
        self.ar = ar
        self.drop = drop or DropSpec()
        base = env.obs_dim
        for g in self.gaussian:
            g.dims_for(base)
        if ar is not None:
            ar.dims_for(base)
            if float(np.sum(np.abs(ar.alphas))) >= 1.0 and ar.alphas not in _warned_alphas:
                _warned_alphas.add(ar.alphas)
                logger.warning("AR noise coefficients %s are not stationary (sum |alpha| >= 1)", list(ar.alphas))
        dropped = self.drop.validate(base)
        self.kept_dims = [i for i in range(base) if i not in dropped]
        self._rng = np.random.default_rng()
        self._ar_state = ArState.zeros(ar.order) if ar is not None else None

    @property
    def obs_dim(self) -> int:
        return len(self.kept_dims)

    @property
    def action_space(self) -> ActionSpace:
        return self.env.action_space

    @property
    def observation_labels(self) -> list[str]:
        labels = self.env.observation_labels
        return [labels[i] for i in self.kept_dims]

    def _emit(self, obs: np.ndarray) -> np.ndarray:
        for g in self.gaussian:
            obs = gaussian_perturb(obs, g, self._rng)
        if self.ar is not None:
            self._ar_state, z = ar_advance(self._ar_state, self.ar, self._rng)
            obs = ar_perturb(obs, z, self.ar)
        return obs[self.kept_dims]

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            # noise stream derived from, but distinct from, the environment stream
            self._rng = np.random.default_rng([seed, 1])
        obs = self.env.reset(seed)
        if self.ar is not None:
            self._ar_state = ArState.zeros(self.ar.order)
        return self._emit(obs)

    def step(self, action) -> StepOutcome:
        out = self.env.step(action)
        return StepOutcome(self._emit(out.observation), out.reward, out.terminated, out.truncated)
