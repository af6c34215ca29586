"""Euclidean projection onto the capped box ``{s in [0, 1]^n : sum(s) <= eps}``.

The projection is ``clip(a - mu)`` for the smallest ``mu >= 0`` that makes
the clipped sum feasible. When clipping alone is feasible ``mu = 0``;
otherwise ``mu`` solves ``sum(clip(a - mu)) = eps`` and is found by bisection
on ``[max(0, min(a) - 1), max(a)]``. That function of ``mu`` is piecewise linear and
non-increasing, so bisection always brackets a root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, NumericError

DEFAULT_TOL = 1e-10
MAX_BISECTION_ITERS = 200
ORACLE_MAX_SIZE = 64


@dataclass(frozen=True)
class ProjectionResult:
    s: np.ndarray
    mu: float
    bisection_iters: int
    active_case: Literal["budget-tight", "interior"]


def _clipped_sum(a, mu):
    return float(np.clip(a - mu, 0.0, 1.0).sum())


def bisection_bound(a: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Iteration cap implied by halving the initial bracket down to ``tol``."""
    width = float(a.max() - a.min() + 1.0)
    return max(0, math.ceil(math.log2(width / tol)))


def project(a, eps: float, tol: float = DEFAULT_TOL) -> ProjectionResult:
    a = np.asarray(a, dtype=float)
    if eps < 0:
        raise ConfigError(f"budget must be nonnegative, got {eps}")
    if tol <= 0:
        raise ConfigError(f"tolerance must be positive, got {tol}")
    if not np.isfinite(a).all():
        raise NumericError("cannot project a non-finite vector")

    clipped = np.clip(a, 0.0, 1.0)
    if a.size == 0 or clipped.sum() <= eps:
        return ProjectionResult(clipped, 0.0, 0, "interior")

    # clipping alone is infeasible here, so the root has mu > 0
    lo, hi = max(0.0, float(a.min()) - 1.0), float(a.max())
    iters = 0
    while hi - lo > tol:
        if iters >= MAX_BISECTION_ITERS:
            raise NumericError(f"bisection did not converge in {iters} iterations")
        mu = 0.5 * (lo + hi)
        iters += 1
        excess = _clipped_sum(a, mu) - eps
        if abs(excess) <= tol:
            lo = hi = mu
        elif excess > 0:
            lo = mu
        else:
            hi = mu
    mu = 0.5 * (lo + hi)
    return ProjectionResult(np.clip(a - mu, 0.0, 1.0), mu, iters, "budget-tight")


def project_oracle(a, eps: float) -> np.ndarray:
    """Exact projection by enumerating the breakpoints of the clipped-sum curve.

    Test-scale only. Between consecutive breakpoints (the values ``a_i`` and
    ``a_i - 1``) the set of entries clipped at 0, clipped at 1 and free is
    fixed, so the clipped sum is linear in ``mu`` and the root is solved for
    in closed form on the segment that crosses ``eps``.
    """
    a = np.asarray(a, dtype=float)
    if a.size > ORACLE_MAX_SIZE:
        raise ValueError(f"oracle limited to n <= {ORACLE_MAX_SIZE}, got {a.size}")
    if eps < 0:
        raise ConfigError(f"budget must be nonnegative, got {eps}")
    if np.clip(a, 0, 1).sum() <= eps:
        return np.clip(a, 0, 1)

    points = np.unique(np.concatenate([a, a - 1.0, [0.0]]))
    points = points[points >= 0.0]
    # sum is non-increasing in mu; walk segments left to right
    for left, right in zip(points[:-1], points[1:]):
        g_left, g_right = _clipped_sum(a, left), _clipped_sum(a, right)
        if g_left >= eps >= g_right:
            mid = 0.5 * (left + right)
            free = (a - mid > 0) & (a - mid < 1)
            ones = a - mid >= 1
            if free.sum() == 0:
                mu = left
            else:
                mu = (a[free].sum() + ones.sum() - eps) / free.sum()
            return np.clip(a - mu, 0, 1)
    return np.zeros_like(a)
