"""Classic control environments: CartPole-v1, Pendulum-v1 and Acrobot-v1.

Dynamics, constants and termination rules are transcribed from gymnasium
0.29.1 so that the observation streams fed to causal discovery follow the
same data-generating process. Everything runs in float64; each environment
owns a private ``numpy.random.Generator`` (PCG64) that is re-seeded on
``reset(seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from markovlens.errors import ConfigurationError, ContractViolation

ENV_NAMES = ("CartPole-v1", "Pendulum-v1", "Acrobot-v1")

OBSERVATION_LABELS = {
    "CartPole-v1": ["CartPos", "CartVel", "PoleAngle", "PoleAngVel"],
    "Pendulum-v1": ["CosTheta", "SinTheta", "ThetaDot"],
    "Acrobot-v1": ["CosTheta1", "SinTheta1", "CosTheta2", "SinTheta2", "Theta1Dot", "Theta2Dot"],
}


@dataclass(frozen=True)
class ActionSpace:
    """Either ``discrete(n)`` or a ``box`` with per-dimension bounds."""

    kind: str
    n: int = 0
    low: float = 0.0
    high: float = 0.0
    shape: tuple[int, ...] = ()

    @classmethod
    def discrete(cls, n: int) -> "ActionSpace":
        return cls(kind="discrete", n=n)

    @classmethod
    def box(cls, low: float, high: float, dim: int) -> "ActionSpace":
        return cls(kind="box", low=low, high=high, shape=(dim,))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def action_dim(self) -> int:
        """Number of policy outputs: logits for discrete, means for box."""
        return self.n if self.is_discrete else self.shape[0]

    def contains(self, action) -> bool:
        if self.is_discrete:
            if isinstance(action, (bool, np.bool_)):
                return False
            if isinstance(action, np.ndarray):
                if action.size != 1 or not np.issubdtype(action.dtype, np.integer):
                    return False
                action = action.item()
            return isinstance(action, (int, np.integer)) and 0 <= int(action) < self.n
        a = np.asarray(action, dtype=np.float64)
        return a.shape == self.shape and bool(np.all(np.isfinite(a)))


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class ClassicControlEnv:
    """Common interface; subclasses provide the dynamics."""

    name: str = ""
    obs_dim: int = 0
    max_episode_steps: int = 0
    action_space: ActionSpace

    def __init__(self) -> None:
        self._rng = np.random.default_rng()
        self.state: np.ndarray | None = None
        self.steps = 0
        self._done = False

    @property
    def observation_labels(self) -> list[str]:
        return list(OBSERVATION_LABELS[self.name])

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            if seed < 0:
                raise ContractViolation(f"seed must be non-negative, got {seed}")
            self._rng = np.random.default_rng(seed)
        self.state = self._sample_initial_state(self._rng)
        self.steps = 0
        self._done = False
        return self.observation()

    def set_state(self, state) -> None:
        """Place the environment in an explicit internal state (step counter reset)."""
        self.state = np.array(state, dtype=np.float64)
        self.steps = 0
        self._done = False

    def step(self, action) -> StepOutcome:
        if self.state is None:
            raise ContractViolation("call reset() before step()")
        if self._done:
            raise ContractViolation("episode already ended; call reset()")
        if not self.action_space.contains(action):
            raise ContractViolation(f"invalid action {action!r} for {self.name}")
        reward, terminated = self._advance(action)
        self.steps += 1
        truncated = not terminated and self.steps >= self.max_episode_steps
        self._done = terminated or truncated
        return StepOutcome(self.observation(), float(reward), terminated, truncated)

    def observation(self) -> np.ndarray:
        raise NotImplementedError

    def _sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, action) -> tuple[float, bool]:
        raise NotImplementedError


class CartPole(ClassicControlEnv):
    name = "CartPole-v1"
    obs_dim = 4
    max_episode_steps = 500
    action_space = ActionSpace.discrete(2)

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # half the pole length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def _sample_initial_state(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def observation(self):
        return self.state.copy()

    def _advance(self, action):
        x, x_dot, theta, theta_dot = (float(v) for v in self.state)
        force = self.force_mag if int(action) == 1 else -self.force_mag
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (force + self.polemass_length * theta_dot**2 * sintheta) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        # explicit Euler (reference default integrator)
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        self.state = np.array([x, x_dot, theta, theta_dot])
        terminated = bool(
            x < -self.x_threshold
            or x > self.x_threshold
            or theta < -self.theta_threshold
            or theta > self.theta_threshold
        )
        return 1.0, terminated


def angle_normalize(x: float) -> float:
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(ClassicControlEnv):
    name = "Pendulum-v1"
    obs_dim = 3
    max_episode_steps = 200
    action_space = ActionSpace.box(-2.0, 2.0, 1)

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0

    def _sample_initial_state(self, rng):
        return rng.uniform(low=[-np.pi, -1.0], high=[np.pi, 1.0])

    def observation(self):
        theta, thetadot = self.state
        return np.array([np.cos(theta), np.sin(theta), thetadot])

    def _advance(self, action):
        th, thdot = (float(v) for v in self.state)
        u = float(np.clip(np.asarray(action, dtype=np.float64), -self.max_torque, self.max_torque)[0])
        costs = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        newthdot = thdot + (3 * self.g / (2 * self.l) * np.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        newthdot = float(np.clip(newthdot, -self.max_speed, self.max_speed))
        newth = th + newthdot * self.dt
        self.state = np.array([newth, newthdot])
        return -costs, False


def _wrap(x: float, m: float, M: float) -> float:
    diff = M - m
    while x > M:
        x = x - diff
    while x < m:
        x = x + diff
    return x


def _bound(x: float, m: float, M: float) -> float:
    return min(max(x, m), M)


def _rk4(derivs: Callable[[np.ndarray], tuple], y0: np.ndarray, dt: float) -> np.ndarray:
    dt2 = dt / 2.0
    k1 = np.asarray(derivs(y0))
    k2 = np.asarray(derivs(y0 + dt2 * k1))
    k3 = np.asarray(derivs(y0 + dt2 * k2))
    k4 = np.asarray(derivs(y0 + dt * k3))
    return y0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class Acrobot(ClassicControlEnv):
    name = "Acrobot-v1"
    obs_dim = 6
    max_episode_steps = 500
    action_space = ActionSpace.discrete(3)

    dt = 0.2
    LINK_LENGTH_1 = 1.0
    LINK_MASS_1 = 1.0
    LINK_MASS_2 = 1.0
    LINK_COM_POS_1 = 0.5
    LINK_COM_POS_2 = 0.5
    LINK_MOI = 1.0
    MAX_VEL_1 = 4 * math.pi
    MAX_VEL_2 = 9 * math.pi
    AVAIL_TORQUE = (-1.0, 0.0, 1.0)

    def _sample_initial_state(self, rng):
        return rng.uniform(-0.1, 0.1, size=4)

    def observation(self):
        s = self.state
        return np.array([np.cos(s[0]), np.sin(s[0]), np.cos(s[1]), np.sin(s[1]), s[2], s[3]])

    def terminal(self) -> bool:
        s = self.state
        return bool(-math.cos(s[0]) - math.cos(s[1] + s[0]) > 1.0)

    def _dsdt(self, s_augmented: np.ndarray):
        m1, m2 = self.LINK_MASS_1, self.LINK_MASS_2
        l1 = self.LINK_LENGTH_1
        lc1, lc2 = self.LINK_COM_POS_1, self.LINK_COM_POS_2
        I1 = I2 = self.LINK_MOI
        g = 9.8
        a = s_augmented[-1]
        theta1, theta2, dtheta1, dtheta2 = s_augmented[:-1]
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + I1 + I2
        d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + I2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        # "book" variant of the equations of motion
        ddtheta2 = (
            a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2
        ) / (m2 * lc2**2 + I2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0

    def _advance(self, action):
        torque = self.AVAIL_TORQUE[int(action)]
        s_augmented = np.append(self.state, torque)
        ns = _rk4(self._dsdt, s_augmented, self.dt)[:4]
        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = _bound(ns[2], -self.MAX_VEL_1, self.MAX_VEL_1)
        ns[3] = _bound(ns[3], -self.MAX_VEL_2, self.MAX_VEL_2)
        self.state = ns
        terminated = self.terminal()
        return (0.0 if terminated else -1.0), terminated


_REGISTRY: dict[str, type[ClassicControlEnv]] = {
    "CartPole-v1": CartPole,
    "Pendulum-v1": Pendulum,
    "Acrobot-v1": Acrobot,
}


def make_env(name: str) -> ClassicControlEnv:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; expected one of {', '.join(ENV_NAMES)}"
        ) from None


def reset(env: ClassicControlEnv, seed: int) -> np.ndarray:
    return env.reset(seed)


def step(env: ClassicControlEnv, action) -> StepOutcome:
    return env.step(action)
