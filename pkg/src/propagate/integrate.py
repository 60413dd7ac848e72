"""Scalar ODE integration on an output grid.

Two solvers share one contract: given rhs(M, t), an initial state, and a
strictly increasing grid, return the state at every grid point with
non-negativity enforced after each accepted step.

solve_fixed is the training discretization: classic RK4 with a fixed number
of substeps per grid interval, cheap and exactly differentiable by unrolling.
solve_adaptive is the checking tool: Dormand-Prince 5(4) with PI-free step
control, used to confirm the fixed grid is fine enough.  The jitted kernels
in _kernels.py replicate solve_fixed's arithmetic operation for operation;
edit one and you must edit the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, StepBudgetError, StiffnessError


@dataclass
class SolveConfig:
    abstol: float = 1e-6
    reltol: float = 1e-6
    max_step: float | None = None  # None: a quarter of the smallest grid interval
    min_step: float = 1e-12
    max_steps: int = 1_000_000
    substeps_per_interval: int = 4

    def __post_init__(self):
        if self.abstol <= 0 or self.reltol < 0:
            raise ValueError("tolerances must be positive")
        if self.min_step <= 0:
            raise ValueError("min_step must be positive")
        if self.max_step is not None and self.max_step < self.min_step:
            raise ValueError("max_step must be >= min_step")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.substeps_per_interval < 1:
            raise ValueError("substeps_per_interval must be >= 1")


@dataclass
class Trajectory:
    t: np.ndarray
    M: np.ndarray
    rhs_evals: int = 0
    rejected_steps: int = 0

    def __len__(self):
        return len(self.t)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or len(g) < 2:
        raise ValueError("grid must be 1-d with at least two points")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    return g


def solve_fixed(rhs, M0: float, grid, cfg: SolveConfig | None = None) -> Trajectory:
    """Classic RK4 with cfg.substeps_per_interval equal substeps per interval.

    The state is floored at zero after every substep; a non-finite state
    raises DivergenceError carrying the substep time.
    """
    cfg = cfg or SolveConfig()
    g = _check_grid(grid)
    S = cfg.substeps_per_interval
    y = float(M0)
    if y < 0.0:
        y = 0.0
    n = len(g)
    out = np.empty(n, dtype=np.float64)
    out[0] = y
    evals = 0
    for i in range(n - 1):
        h = (g[i + 1] - g[i]) / S
        for s in range(S):
            t = g[i] + s * h
            k1 = rhs(y, t)
            k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h)
            k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h)
            k4 = rhs(y + h * k3, t + h)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            evals += 4
            if not math.isfinite(y):
                raise DivergenceError("state diverged under fixed-step RK4", time=t)
            if y < 0.0:
                y = 0.0
        out[i + 1] = y
    return Trajectory(t=g.copy(), M=out, rhs_evals=evals, rejected_steps=0)


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_DP_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
# 5th-order minus 4th-order weights; the embedded error estimate
_DP_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def solve_adaptive(rhs, M0: float, grid, cfg: SolveConfig | None = None) -> Trajectory:
    """Dormand-Prince 5(4) with steps shortened to land on every grid point.

    Error control uses err <= abstol + reltol * |y| per step; the next step
    scales by clip(0.9 * ratio^(-1/5), 0.2, 5).  Step underflow raises
    StiffnessError, exhausting max_steps raises StepBudgetError, both with
    the failure time attached.
    """
    cfg = cfg or SolveConfig()
    g = _check_grid(grid)
    hmax = cfg.max_step if cfg.max_step is not None else float(np.min(np.diff(g))) / 4.0
    y = float(M0)
    if y < 0.0:
        y = 0.0
    n = len(g)
    out = np.empty(n, dtype=np.float64)
    out[0] = y
    t = float(g[0])
    h = hmax
    evals = 0
    rejected = 0
    steps = 0
    k = [0.0] * 7
    for gi in range(1, n):
        target = float(g[gi])
        while t < target:
            if steps >= cfg.max_steps:
                raise StepBudgetError(f"exceeded {cfg.max_steps} steps before t={target:g}")
            h = min(h, hmax)
            hit_target = t + h >= target
            if hit_target:
                h = target - t
            if h < cfg.min_step and not (hit_target and h > 0):
                raise StiffnessError("step size underflow", time=t)
            for i in range(7):
                yi = y
                for j, a in enumerate(_DP_A[i]):
                    yi += h * a * k[j]
                k[i] = rhs(yi, t + _DP_C[i] * h)
                evals += 1
            y5 = y
            err = 0.0
            for i in range(7):
                y5 += h * _DP_B5[i] * k[i]
                err += h * _DP_E[i] * k[i]
            steps += 1
            tol = cfg.abstol + cfg.reltol * max(abs(y), abs(y5))
            ratio = abs(err) / tol
            if not math.isfinite(y5):
                raise DivergenceError("state diverged under adaptive RK", time=t)
            if ratio <= 1.0:
                t = target if hit_target else t + h
                y = y5 if y5 > 0.0 else 0.0
                factor = 5.0 if ratio == 0.0 else min(max(0.9 * ratio ** -0.2, 0.2), 5.0)
                h = max(h * factor, cfg.min_step)
            else:
                rejected += 1
                h = max(h * min(max(0.9 * ratio ** -0.2, 0.2), 5.0), cfg.min_step)
                if h <= cfg.min_step and ratio > 1.0:
                    raise StiffnessError("step size underflow while rejecting", time=t)
        out[gi] = y
    return Trajectory(t=g.copy(), M=out, rhs_evals=evals, rejected_steps=rejected)
