"""PPO with a clipped surrogate objective and GAE, on top of :mod:`markovlens.nn`.

Separate policy and value MLPs share one Adam optimizer. Discrete action
spaces use a categorical head over logits; box spaces use a Gaussian with
a state-independent log-std, actions clipped to the bounds only when sent
to the environment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from markovlens.envs import ActionSpace
from markovlens.errors import ContractViolation, TrainingError
from markovlens.nn import AdamState, MlpParams, adam_step, init_mlp, mlp_backward, mlp_forward
from markovlens.perturb import EnvRecipe

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    minibatch_size: int = 64
    epochs_per_update: int = 4
    rollout_length: int = 2048
    total_timesteps: int = 50_000
    max_grad_norm: float | None = 0.5
    normalize_advantage: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ContractViolation(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ContractViolation(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if not self.clip_ratio > 0:
            raise ContractViolation(f"clip_ratio must be > 0, got {self.clip_ratio}")
        if not 1 <= self.minibatch_size <= self.rollout_length:
            raise ContractViolation("minibatch_size must be in [1, rollout_length]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Policy:
    pi: MlpParams
    vf: MlpParams
    action_space: ActionSpace
    log_std: np.ndarray | None = None
    optimizer: AdamState | None = None

    @classmethod
    def initial(cls, obs_dim: int, action_space: ActionSpace, rng: np.random.Generator) -> "Policy":
        pi = init_mlp(obs_dim, action_space.action_dim, rng, out_gain=0.01)
        vf = init_mlp(obs_dim, 1, rng, out_gain=1.0)
        log_std = None if action_space.is_discrete else np.zeros(action_space.action_dim)
        policy = cls(pi, vf, action_space, log_std)
        policy.optimizer = AdamState.fresh(policy.to_vector().size)
        return policy

    @property
    def obs_dim(self) -> int:
        return self.pi.in_dim

    def to_vector(self) -> np.ndarray:
        parts = [self.pi.to_vector(), self.vf.to_vector()]
        if self.log_std is not None:
            parts.append(self.log_std)
        return np.concatenate(parts)

    def with_vector(self, vector: np.ndarray, optimizer: AdamState | None = None) -> "Policy":
        n_pi = self.pi.to_vector().size
        n_vf = self.vf.to_vector().size
        log_std = None if self.log_std is None else vector[n_pi + n_vf:].copy()
        return Policy(
            self.pi.like(vector[:n_pi]),
            self.vf.like(vector[n_pi:n_pi + n_vf]),
            self.action_space,
            log_std,
            optimizer if optimizer is not None else self.optimizer,
        )

    def value(self, obs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.vf, obs)[..., 0]

    def distribution_params(self, obs: np.ndarray) -> np.ndarray:
        """Logits (discrete) or action means (box)."""
        return mlp_forward(self.pi, obs)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = self.distribution_params(obs)
        if self.action_space.is_discrete:
            return _categorical_log_prob(out, actions)
        return _gaussian_log_prob(out, self.log_std, actions)

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        """Return (policy action, env action, log-prob, value) for a single observation."""
        out = self.distribution_params(obs)
        value = float(self.value(obs))
        if self.action_space.is_discrete:
            logp_all = out - _logsumexp(out)
            if deterministic:
                a = int(np.argmax(out))
            else:
                a = int(rng.choice(out.shape[0], p=np.exp(logp_all) / np.exp(logp_all).sum()))
            return a, a, float(logp_all[a]), value
        std = np.exp(self.log_std)
        a = out.copy() if deterministic else out + std * rng.normal(size=out.shape)
        logp = float(_gaussian_log_prob(out[None, :], self.log_std, a[None, :])[0])
        env_action = np.clip(a, self.action_space.low, self.action_space.high)
        return a, env_action, logp, value


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True)))


def _categorical_log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    logp_all = logits - _logsumexp(logits)
    return logp_all[np.arange(logits.shape[0]), np.asarray(actions, dtype=int)]


def _gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    var = np.exp(2 * log_std)
    return np.sum(-((actions - mean) ** 2) / (2 * var) - log_std - 0.5 * LOG_2PI, axis=-1)


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    logp = logits - _logsumexp(logits)
    return -np.sum(np.exp(logp) * logp, axis=-1)


def compute_gae(rewards, values, dones, bootstrap: float, gamma: float, lam: float):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks that the transition at ``t`` ended its episode, which
    masks the value of the following state.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not rewards.shape == values.shape == dones.shape or rewards.ndim != 1:
        raise ContractViolation("rewards, values and dones must be 1-D and of equal length")
    if not (0 < gamma <= 1 and 0 <= lam <= 1):
        raise ContractViolation("gamma must be in (0, 1] and lambda in [0, 1]")
    n = rewards.shape[0]
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap if t == n - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap: float = 0.0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def finish(self, gamma: float, lam: float) -> None:
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, self.bootstrap, gamma, lam)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def _loss_and_grads(policy: Policy, obs, actions, old_logp, adv, returns, cfg: PpoConfig):
    """Minibatch loss and its gradient w.r.t. the flat parameter vector."""
    b = obs.shape[0]
    out = mlp_forward(policy.pi, obs)
    values = mlp_forward(policy.vf, obs)[:, 0]
    if policy.action_space.is_discrete:
        logp_all = out - _logsumexp(out)
        logp = logp_all[np.arange(b), actions.astype(int)]
        probs = np.exp(logp_all)
        entropy = -np.sum(probs * logp_all, axis=1)
    else:
        std2 = np.exp(2 * policy.log_std)
        diff = actions - out
        logp = np.sum(-(diff**2) / (2 * std2) - policy.log_std - 0.5 * LOG_2PI, axis=1)
        entropy = np.full(b, np.sum(policy.log_std + 0.5 * (1.0 + LOG_2PI)))

    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value_loss = np.mean((returns - values) ** 2)
    entropy_mean = np.mean(entropy)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy_mean
    if not np.isfinite(loss):
        raise TrainingError("non-finite PPO loss", {
            "policy_loss": float(policy_loss), "value_loss": float(value_loss),
            "max_ratio": float(np.max(ratio)),
        })

    # d loss / d logp: the unclipped branch carries gradient unless the clipped one is strictly smaller
    active = surr1 <= surr2
    g_logp = -(adv * ratio * active) / b
    g_value = cfg.value_coef * 2.0 * (values - returns) / b

    g_log_std = None
    if policy.action_space.is_discrete:
        onehot = np.zeros_like(out)
        onehot[np.arange(b), actions.astype(int)] = 1.0
        g_out = g_logp[:, None] * (onehot - probs)
        if cfg.entropy_coef:
            # dH/dz_k = -p_k (log p_k + H)
            g_out += (-cfg.entropy_coef / b) * (-probs * (logp_all + entropy[:, None]))
    else:
        g_out = g_logp[:, None] * (diff / std2)
        g_log_std = np.sum(g_logp[:, None] * (diff**2 / std2 - 1.0), axis=0)
        g_log_std -= cfg.entropy_coef * np.ones_like(policy.log_std)

    parts = [mlp_backward(policy.pi, obs, g_out).to_vector(), mlp_backward(policy.vf, obs, g_value[:, None]).to_vector()]
    if g_log_std is not None:
        parts.append(g_log_std)
    grad = np.concatenate(parts)
    stats = (
        float(policy_loss),
        float(value_loss),
        float(entropy_mean),
        float(np.mean(np.abs(ratio - 1) > cfg.clip_ratio)),
        float(np.mean((ratio - 1) - (logp - old_logp))),
    )
    return grad, stats


def ppo_update(policy: Policy, buffer: RolloutBuffer, config: PpoConfig, rng: np.random.Generator):
    """Run ``epochs_per_update`` epochs of shuffled minibatch updates; returns (policy, UpdateStats)."""
    if buffer.advantages is None:
        buffer.finish(config.gamma, config.gae_lambda)
    adv = buffer.advantages
    if config.normalize_advantage and len(buffer) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(buffer)
    opt = policy.optimizer or AdamState.fresh(policy.to_vector().size)
    theta = policy.to_vector()
    collected = []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            grad, stats = _loss_and_grads(
                policy, buffer.obs[idx], buffer.actions[idx], buffer.log_probs[idx],
                adv[idx], buffer.returns[idx], config,
            )
            if config.max_grad_norm is not None:
                norm = float(np.linalg.norm(grad))
                coef = config.max_grad_norm / (norm + 1e-6)
                if coef < 1.0:
                    grad = grad * coef
            theta, opt = adam_step(theta, grad, opt, config.learning_rate)
            policy = policy.with_vector(theta, opt)
            collected.append(stats)
    means = np.mean(np.array(collected), axis=0)
    return policy, UpdateStats(*(float(v) for v in means))


@dataclass
class TrainResult:
    policy: Policy
    curve: list[tuple[int, float]] = field(default_factory=list)
    updates: list[UpdateStats] = field(default_factory=list)

    def final_return(self, last: int = 10) -> float:
        if not self.curve:
            return float("nan")
        return float(np.mean([r for _, r in self.curve[-last:]]))


def collect_rollout(env, policy: Policy, obs: np.ndarray, n: int, gamma: float, rng: np.random.Generator,
                    episode: dict, t0: int, curve: list):
    """Step ``env`` for ``n`` transitions. Returns (buffer, next observation)."""
    obs_dim = env.obs_dim
    act_shape = () if policy.action_space.is_discrete else policy.action_space.shape
    buf_obs = np.zeros((n, obs_dim))
    buf_act = np.zeros((n,) + act_shape)
    buf_logp = np.zeros(n)
    buf_val = np.zeros(n)
    buf_rew = np.zeros(n)
    buf_done = np.zeros(n, dtype=bool)
    for t in range(n):
        a, env_a, logp, value = policy.act(obs, rng)
        out = env.step(env_a)
        reward = out.reward
        episode["return"] += out.reward
        if out.truncated and not out.terminated:
            # time-limit truncation: bootstrap from the value of the final observation
            reward += gamma * float(policy.value(out.observation))
        buf_obs[t], buf_act[t], buf_logp[t], buf_val[t] = obs, a, logp, value
        buf_rew[t] = reward
        buf_done[t] = out.terminated or out.truncated
        if buf_done[t]:
            curve.append((t0 + t + 1, episode["return"]))
            episode["return"] = 0.0
            obs = env.reset()
        else:
            obs = out.observation
    bootstrap = float(policy.value(obs))
    return RolloutBuffer(buf_obs, buf_act, buf_logp, buf_val, buf_rew, buf_done, bootstrap), obs


def train(recipe: EnvRecipe, config: PpoConfig, seed: int) -> TrainResult:
    """Train from scratch on ``recipe``; deterministic given ``seed``."""
    if config.total_timesteps < config.rollout_length:
        raise ContractViolation("total_timesteps must be >= rollout_length")
    init_rng, act_rng, shuffle_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    env = recipe.build()
    policy = Policy.initial(env.obs_dim, env.action_space, init_rng)
    obs = env.reset(seed)
    result = TrainResult(policy)
    episode = {"return": 0.0}
    timesteps = 0
    while timesteps < config.total_timesteps:
        buffer, obs = collect_rollout(env, policy, obs, config.rollout_length, config.gamma, act_rng,
                                      episode, timesteps, result.curve)
        timesteps += config.rollout_length
        buffer.finish(config.gamma, config.gae_lambda)
        policy, stats = ppo_update(policy, buffer, config, shuffle_rng)
        result.updates.append(stats)
        logger.debug("t=%d episodes=%d stats=%s", timesteps, len(result.curve), stats)
    result.policy = policy
    return result
