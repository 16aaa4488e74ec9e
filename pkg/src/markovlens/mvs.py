"""Markov Violation Score.

    MVS = sum_{k=2}^{tau_max} (k-1) sum_{i,j} |val_ijk| (-ln p_ijk) 1[p_ijk <= alpha]
          / (N^2 * sum_{k=2}^{tau_max} (k-1))

Lags 0 and 1 never contribute; self-links (i == j) do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from markovlens.errors import ContractViolation
from markovlens.pcmci import PcmciResult


@dataclass(frozen=True)
class MvsConfig:
    tau_max: int = 5
    alpha_level: float = 0.05
    p_floor: float = 1e-10

    def __post_init__(self):
        if self.tau_max < 2:
            raise ContractViolation("MVS needs tau_max >= 2")
        if not 0 < self.alpha_level < 1:
            raise ContractViolation("alpha_level must be in (0, 1)")
        if not 0 < self.p_floor < self.alpha_level:
            raise ContractViolation("p_floor must be in (0, alpha_level)")


@dataclass(frozen=True)
class Contribution:
    source: int
    target: int
    lag: int
    abs_val: float
    neg_log_p: float
    weight: int

    @property
    def term(self) -> float:
        return self.weight * self.abs_val * self.neg_log_p


@dataclass
class MvsReport:
    score: float
    N: int
    contributions: list[Contribution] = field(default_factory=list)

    @property
    def n_contributing_links(self) -> int:
        return len(self.contributions)


def lag_weight_total(tau_max: int) -> int:
    return sum(k - 1 for k in range(2, tau_max + 1))


def compute_mvs(result: PcmciResult, config: MvsConfig = MvsConfig()) -> MvsReport:
    if config.tau_max > result.tau_max:
        raise ContractViolation(f"MVS tau_max {config.tau_max} exceeds the result's tau_max {result.tau_max}")
    n = result.val.shape[0]
    lags = np.arange(2, config.tau_max + 1)
    val = np.abs(result.val[:, :, 2:config.tau_max + 1])
    p = np.maximum(result.p[:, :, 2:config.tau_max + 1], config.p_floor)
    selected = p <= config.alpha_level
    weights = (lags - 1)[None, None, :]
    terms = np.where(selected, weights * val * -np.log(p), 0.0)
    score = float(terms.sum() / (n * n * lag_weight_total(config.tau_max)))
    contributions = [
        Contribution(int(i), int(j), int(lags[k]), float(val[i, j, k]), float(-math.log(p[i, j, k])), int(lags[k] - 1))
        for i, j, k in zip(*np.nonzero(selected))
    ]
    return MvsReport(score, n, contributions)
