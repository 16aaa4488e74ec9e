"""Linear partial-correlation conditional-independence test (ParCorr).

x and y are each regressed on the conditioning set plus an intercept by
least squares; the statistic is the Pearson correlation of the two
residual vectors, and its two-sided p-value comes from a Student-t
distribution with ``n - |Z| - 2`` degrees of freedom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from markovlens.errors import ContractViolation

logger = logging.getLogger(__name__)

RIDGE = 1e-10
# residuals smaller than this fraction of the centred input norm count as exactly zero
DEGENERATE_RTOL = 1e-9
COND_LIMIT = 1e10


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    df: int


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student-t with ``df`` degrees of freedom.

    Uses the regularized incomplete beta form I_{df/(df+t^2)}(df/2, 1/2),
    which keeps full relative precision far into the tail.
    """
    if df <= 0:
        raise ContractViolation(f"degrees of freedom must be positive, got {df}")
    if np.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, max(0.0, special.betainc(0.5 * df, 0.5, x))))


def residualize(target: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Least-squares residual of ``target`` on ``design`` (which already holds an intercept column)."""
    if design.shape[1] == 1:
        return target - target.mean()
    # column scaling keeps the conditioning check meaningful for mixed units
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    d = design / scale
    s = np.linalg.svd(d, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > COND_LIMIT:
        gram = d.T @ d + RIDGE * np.eye(d.shape[1])
        beta = np.linalg.solve(gram, d.T @ target)
    else:
        beta = np.linalg.lstsq(d, target, rcond=None)[0]
    return target - d @ beta


def parcorr(x: Sequence[float], y: Sequence[float], conditions: Sequence[Sequence[float]] = ()) -> CiTestResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(conditions, dtype=np.float64).reshape(-1, x.shape[0]) if len(conditions) else np.empty((0, x.shape[0]))
    n = x.shape[0]
    k = z.shape[0]
    if y.shape != (n,) or x.ndim != 1:
        raise ContractViolation("x and y must be 1-D series of equal length")
    if n <= k + 2:
        raise ContractViolation(f"need more than {k + 2} samples for {k} conditions, got {n}")
    return parcorr_matrix(x, y, z.T)


def parcorr_matrix(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> CiTestResult:
    """ParCorr on arrays: ``z`` has shape (n, k) with one column per condition."""
    n, k = z.shape
    df = n - k - 2
    design = np.column_stack([np.ones(n), z]) if k else np.ones((n, 1))
    rx = residualize(x, design)
    ry = residualize(y, design)
    nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
    sx = np.linalg.norm(x - x.mean())
    sy = np.linalg.norm(y - y.mean())
    if nx <= DEGENERATE_RTOL * sx or ny <= DEGENERATE_RTOL * sy or nx == 0 or ny == 0:
        return CiTestResult(0.0, 1.0, df)
    r = float(np.dot(rx, ry) / (nx * ny))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return CiTestResult(r, 0.0, df)
    t = r * np.sqrt(df / (1.0 - r * r))
    return CiTestResult(r, student_t_two_sided_p(t, df), df)
