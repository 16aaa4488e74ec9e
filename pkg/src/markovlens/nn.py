"""Fixed-architecture MLP (in -> 64 -> 64 -> out, tanh hidden), its gradients, and Adam.

Weights follow the ``W @ x`` convention: ``W1`` has shape ``(64, in_dim)``.
Batched inputs are row-major ``(batch, in_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from markovlens.errors import ContractViolation, TrainingError

HIDDEN = 64


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W3.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def like(self, vector: np.ndarray) -> "MlpParams":
        """Unflatten ``vector`` into arrays shaped like this instance."""
        out, i = [], 0
        for a in self.arrays():
            out.append(vector[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        if i != vector.size:
            raise ContractViolation(f"vector has {vector.size} entries, params need {i}")
        return MlpParams(*out)

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, hidden: int = HIDDEN) -> "MlpParams":
        return cls(
            np.zeros((hidden, in_dim)), np.zeros(hidden),
            np.zeros((hidden, hidden)), np.zeros(hidden),
            np.zeros((out_dim, hidden)), np.zeros(out_dim),
        )


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    flat = rng.normal(size=(rows, cols))
    if rows < cols:
        flat = flat.T
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def init_mlp(in_dim: int, out_dim: int, rng: np.random.Generator, out_gain: float = 1.0) -> MlpParams:
    """Orthogonal init: gain sqrt(2) on hidden layers, ``out_gain`` on the head; zero biases."""
    hidden_gain = np.sqrt(2.0)
    return MlpParams(
        orthogonal((HIDDEN, in_dim), hidden_gain, rng), np.zeros(HIDDEN),
        orthogonal((HIDDEN, HIDDEN), hidden_gain, rng), np.zeros(HIDDEN),
        orthogonal((out_dim, HIDDEN), out_gain, rng), np.zeros(out_dim),
    )


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim or x.ndim not in (1, 2):
        raise ContractViolation(f"input shape {x.shape} does not match input dimension {params.in_dim}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray):
    h1 = np.tanh(x @ params.W1.T + params.b1)
    h2 = np.tanh(h1 @ params.W2.T + params.b2)
    out = h2 @ params.W3.T + params.b3
    return h1, h2, out


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return _forward_cache(params, x)[2]


def mlp_backward(params: MlpParams, x, output_grad) -> MlpParams:
    """Gradient of ``sum(output_grad * mlp_forward(params, x))`` w.r.t. every parameter.

    For a batch the per-sample gradients are summed.
    """
    x = _check_input(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, g = x[None, :], g[None, :]
    if g.shape != (x.shape[0], params.out_dim):
        raise ContractViolation(f"output_grad shape {g.shape} does not match output dimension {params.out_dim}")
    h1, h2, _ = _forward_cache(params, x)
    dW3 = g.T @ h2
    db3 = g.sum(axis=0)
    dz2 = (g @ params.W3) * (1.0 - h2**2)
    dW2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2) * (1.0 - h1**2)
    dW1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return MlpParams(dW1, db1, dW2, db2, dW3, db3)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(params, grads, state: AdamState, lr: float):
    """Bias-corrected Adam update. Accepts flat arrays or ``MlpParams`` (returned in kind)."""
    structured = isinstance(params, MlpParams)
    p = params.to_vector() if structured else np.asarray(params, dtype=np.float64)
    g = grads.to_vector() if isinstance(grads, MlpParams) else np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape or state.m.shape != p.shape:
        raise ContractViolation(f"shape mismatch: params {p.shape}, grads {g.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient in Adam step", {"n_nonfinite": int(np.sum(~np.isfinite(g)))})
    t = state.t + 1
    m = BETA1 * state.m + (1 - BETA1) * g
    v = BETA2 * state.v + (1 - BETA2) * g * g
    m_hat = m / (1 - BETA1**t)
    v_hat = v / (1 - BETA2**t)
    new = p - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return (params.like(new) if structured else new), AdamState(m, v, t)
