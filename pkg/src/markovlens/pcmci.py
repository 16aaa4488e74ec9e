"""PCMCI causal discovery with ParCorr, and Fisher aggregation of repeated runs.

Two phases:

* PC1 condition selection: for each target variable, lagged candidates
  (i, tau), tau in 1..tau_max, are pruned by conditional-independence tests
  with growing condition sets drawn from the strongest surviving candidates.
* MCI: every (i, tau) -> (j, 0) link, tau in 0..tau_max, is tested
  conditioning on the parents of j and the tau-shifted parents of i.

Lags are stored as positive integers (``val[i, j, tau]`` is the link from
variable i at t - tau to variable j at t); link tables report them negated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from markovlens.citest import parcorr_matrix
from markovlens.errors import ContractViolation

logger = logging.getLogger(__name__)

P_FLOOR = 1e-10

Link = tuple[int, int]  # (variable, positive lag)


@dataclass
class TimeSeriesPanel:
    data: np.ndarray
    var_names: list[str] = field(default_factory=list)
    episode_starts: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ContractViolation("panel data must be a T x N matrix")
        if not self.var_names:
            self.var_names = [str(i) for i in range(self.data.shape[1])]
        if len(self.var_names) != self.data.shape[1]:
            raise ContractViolation("one variable name per column required")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    def validate(self, tau_max: int) -> None:
        if self.N < 2:
            raise ContractViolation(f"panel needs at least 2 variables, got {self.N}")
        if not np.all(np.isfinite(self.data)):
            raise ContractViolation("panel contains non-finite entries")
        if self.T <= 10 * (tau_max + 1):
            raise ContractViolation(f"panel length {self.T} too short for tau_max={tau_max} (need > {10 * (tau_max + 1)})")
        if tau_max < 1:
            raise ContractViolation("tau_max must be >= 1")


@dataclass
class PcmciResult:
    val: np.ndarray
    p: np.ndarray
    alpha: float
    tau_max: int
    var_names: list[str] = field(default_factory=list)
    parents: dict[int, list[Link]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.val.shape[0]

    def significant_links(self, alpha: float | None = None) -> list[dict]:
        """Rows (child, parent, lag, p_value, partial_corr) with p <= alpha.

        Grouped by child; within a child sorted by decreasing |partial_corr|.
        """
        alpha = self.alpha if alpha is None else alpha
        rows = []
        for j in range(self.N):
            links = []
            for i in range(self.N):
                for tau in range(self.tau_max + 1):
                    if i == j and tau == 0:
                        continue
                    if self.p[i, j, tau] <= alpha:
                        links.append((i, tau))
            links.sort(key=lambda it: -abs(self.val[it[0], j, it[1]]))
            for i, tau in links:
                rows.append({
                    "child": j,
                    "parent": i,
                    "lag": -tau,
                    "p_value": float(self.p[i, j, tau]),
                    "partial_corr": float(self.val[i, j, tau]),
                })
        return rows


@dataclass
class AggregatedResult(PcmciResult):
    runs: int = 1


def _lagged(data: np.ndarray, start: int, var: int, lag: int) -> np.ndarray:
    """Column ``var`` at time t - lag for t in start..T-1."""
    T = data.shape[0]
    return data[start - lag:T - lag, var]


def _design(data: np.ndarray, start: int, conds: Sequence[Link]) -> np.ndarray:
    if not conds:
        return np.empty((data.shape[0] - start, 0))
    return np.column_stack([_lagged(data, start, v, lag) for v, lag in conds])


def _constant_columns(data: np.ndarray) -> set[int]:
    return {i for i in range(data.shape[1]) if np.ptp(data[:, i]) == 0}


def pc1_select_parents(panel: TimeSeriesPanel, target: int, tau_max: int, alpha_pc: float) -> list[Link]:
    """Lagged parents of ``target`` ordered by decreasing minimum |statistic|."""
    panel.validate(tau_max)
    data = panel.data
    constant = _constant_columns(data)
    if target in constant:
        logger.warning("variable %s is constant; it gets no parents", panel.var_names[target])
        return []
    if constant:
        logger.warning("constant variables %s excluded from candidate parents", sorted(constant))
    start = tau_max
    y = data[start:, target]
    parents: list[Link] = [(i, tau) for tau in range(1, tau_max + 1) for i in range(panel.N) if i not in constant]
    val_min: dict[Link, float] = {}
    q = 0
    while len(parents) - 1 >= q:
        nonsig = []
        for parent in parents:
            conds = [c for c in parents if c != parent][:q]
            res = parcorr_matrix(_lagged(data, start, *parent), y, _design(data, start, conds))
            val_min[parent] = min(abs(res.statistic), val_min.get(parent, np.inf))
            if res.p_value > alpha_pc:
                nonsig.append(parent)
        for parent in nonsig:
            parents.remove(parent)
            del val_min[parent]
        # stable sort: ties keep the previous order
        parents = sorted(parents, key=lambda c: -val_min[c])
        q += 1
    return parents


def mci(panel: TimeSeriesPanel, parents: dict[int, list[Link]], tau_max: int, alpha: float = 0.05,
        max_conds_px: int | None = None) -> PcmciResult:
    """Momentary conditional independence tests for every lagged and contemporaneous link.

    All tests share the sample window t = 2 * tau_max .. T-1, the largest lag
    any (shifted) condition can reach.
    """
    panel.validate(tau_max)
    data = panel.data
    N = panel.N
    if max_conds_px is None:
        max_conds_px = tau_max * N
    start = 2 * tau_max
    n_eff = panel.T - start
    val = np.zeros((N, N, tau_max + 1))
    p = np.ones((N, N, tau_max + 1))
    for j in range(N):
        y = data[start:, j]
        conds_y = parents.get(j, [])
        for i in range(N):
            conds_x = parents.get(i, [])[:max_conds_px]
            for tau in range(tau_max + 1):
                if i == j and tau == 0:
                    continue
                z = [c for c in conds_y if c != (i, tau)]
                z += [c for c in ((k, tau + lag) for k, lag in conds_x) if c not in z]
                if n_eff < len(z) + 3:
                    logger.warning("link %d(-%d) -> %d: %d samples for %d conditions; left untested", i, tau, j, n_eff, len(z))
                    continue
                res = parcorr_matrix(_lagged(data, start, i, tau), y, _design(data, start, z))
                val[i, j, tau] = res.statistic
                p[i, j, tau] = res.p_value
    # contemporaneous links are tested in both directions; keep the weaker (larger p) of each pair
    for i in range(N):
        for j in range(i + 1, N):
            if p[i, j, 0] >= p[j, i, 0]:
                p[j, i, 0], val[j, i, 0] = p[i, j, 0], val[i, j, 0]
            else:
                p[i, j, 0], val[i, j, 0] = p[j, i, 0], val[j, i, 0]
    p = np.clip(p, P_FLOOR, 1.0)
    return PcmciResult(val, p, alpha, tau_max, list(panel.var_names), {k: list(v) for k, v in parents.items()})


def run_pcmci(panel: TimeSeriesPanel, tau_max: int = 5, alpha: float = 0.05, seed: int | None = None) -> PcmciResult:
    """PC1 for every variable (alpha_pc = alpha), then MCI.

    ParCorr is deterministic, so ``seed`` only exists for interface symmetry
    with randomized tests.
    """
    panel.validate(tau_max)
    parents = {j: pc1_select_parents(panel, j, tau_max, alpha) for j in range(panel.N)}
    return mci(panel, parents, tau_max, alpha)


def fisher_combine(p_values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Fisher's method: survival of -2 * sum(ln p) under chi-square with 2R degrees of freedom."""
    p_values = np.asarray(p_values, dtype=np.float64)
    r = p_values.shape[axis]
    statistic = -2.0 * np.sum(np.log(p_values), axis=axis)
    return stats.chi2.sf(statistic, 2 * r)


def aggregate_runs(results: Sequence[PcmciResult]) -> AggregatedResult:
    if not results:
        raise ContractViolation("need at least one result to aggregate")
    first = results[0]
    for r in results[1:]:
        if r.val.shape != first.val.shape or r.tau_max != first.tau_max or r.alpha != first.alpha:
            raise ContractViolation("results to aggregate must share shape, alpha and tau_max")
    val = np.mean([r.val for r in results], axis=0)
    p = fisher_combine(np.stack([np.clip(r.p, P_FLOOR, 1.0) for r in results]), axis=0)
    p = np.clip(p, P_FLOOR, 1.0)
    return AggregatedResult(val, p, first.alpha, first.tau_max, list(first.var_names), {}, runs=len(results))
