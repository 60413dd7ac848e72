"""Model fitting: MSE loss through the unrolled integrator, Adam then L-BFGS.

The training loss is the mean squared error between the RK4 trajectory on
the observation grid and the smoothed intensity signal.  Gradients come from
the hand-derived discrete adjoints in _kernels (discretize-then-optimize),
so they are exact for the computation actually performed, clamp kinks and
all.  The same gradient is reachable through the autodiff tape: mse_loss
accepts a Var parameter vector and registers the trajectory as one custom
op, which is how neuralnet.grad sees it.

Divergence handling is deliberate: a trajectory that leaves float range
scores the sentinel loss 1e12 with a NaN gradient.  Adam rejects steps with
non-finite gradients and stays put; the L-BFGS line search rejects the
sentinel by ordinary Armijo comparison.  Only a fit where every iterate
diverged raises FitFailureError.

Optimizer parameterizations:

    ode             z = [ln a0, ln beta, kappa, ln K, ln? no - pd raw]
                    (alpha0, beta, K in log space so positivity costs nothing)
    ode_no_feedback same minus kappa, which is pinned at exactly 0
    ude             raw model vector [a0, beta, K, pd, phi(31)]
    node            raw network vector psi(337)

Model-space layouts are documented in _kernels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as kr
from . import autodiff as ad
from . import neuralnet
from .dynamics import (
    DEFAULT_ALPHA0,
    DEFAULT_BETA,
    DEFAULT_K,
    DEFAULT_KAPPA,
    DEFAULT_P_DECAY,
    MODEL_KINDS,
    NODE_SPEC,
    UDE_SPEC,
    RhsContext,
    context_from_series,
    initial_state,
)
from .errors import DivergenceError, FitFailureError
from .ingest import IntensitySeries
from .integrate import Trajectory
from .neuralnet import MlpSpec

SENTINEL_LOSS = kr.SENTINEL_LOSS


@dataclass
class TrainConfig:
    adam_iters: int = 300
    adam_lr: float = 5e-4
    lbfgs_iters: int = 200
    lbfgs_memory: int = 10
    substeps_per_interval: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.adam_iters < 0 or self.lbfgs_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.adam_lr <= 0:
            raise ValueError("adam_lr must be positive")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.substeps_per_interval < 1:
            raise ValueError("substeps_per_interval must be >= 1")


@dataclass
class FitResult:
    kind: str
    params: np.ndarray
    trajectory: Trajectory
    loss_trace: list  # (iteration, phase, loss) triples
    final_loss: float
    wall_time: float
    seed: int
    nn_spec: MlpSpec | None = None


@dataclass
class _Problem:
    """Everything the kernels need, precomputed once per fit."""

    kind: str
    grid: np.ndarray
    S: int
    eta_t: np.ndarray
    eta_v: np.ndarray
    t_max: float
    t_data_max: float
    max_eta: float
    M0: float
    target: np.ndarray


def _prepare(kind: str, series: IntensitySeries, cfg: TrainConfig,
             ctx: RhsContext | None = None) -> _Problem:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    series.validate()
    if series.smoothed is None:
        raise ValueError("series must be smoothed before fitting")
    if ctx is None:
        ctx = context_from_series(series)
    eta_t, eta_v = ctx.eta.nodes
    grid = np.asarray(series.t, dtype=np.float64)
    return _Problem(
        kind=kind,
        grid=grid,
        S=int(cfg.substeps_per_interval),
        eta_t=np.asarray(eta_t, dtype=np.float64),
        eta_v=np.asarray(eta_v, dtype=np.float64),
        t_max=float(ctx.params.t_max),
        t_data_max=float(ctx.t_data_max),
        max_eta=float(ctx.max_eta),
        M0=initial_state(ctx, float(grid[0])),
        target=np.asarray(series.smoothed, dtype=np.float64),
    )


def param_dim(kind: str) -> int:
    return {"ode": kr.N_MECH, "ode_no_feedback": kr.N_MECH,
            "ude": kr.N_UDE, "node": kr.N_NODE}[kind]


def _forward(prob: _Problem, x: np.ndarray):
    if prob.kind in ("ode", "ode_no_feedback"):
        return kr.mech_forward(x, prob.grid, prob.S, prob.eta_t, prob.eta_v,
                               prob.t_max, prob.M0)
    if prob.kind == "ude":
        return kr.ude_forward(x, prob.grid, prob.S, prob.eta_t, prob.eta_v,
                              prob.t_max, prob.max_eta, prob.M0)
    return kr.node_forward(x, prob.grid, prob.S, prob.t_data_max,
                           prob.max_eta, prob.M0)


def _adjoint(prob: _Problem, x: np.ndarray, Y, U, dY) -> np.ndarray:
    if prob.kind in ("ode", "ode_no_feedback"):
        return kr.mech_adjoint(x, prob.grid, prob.S, prob.eta_t, prob.eta_v,
                               prob.t_max, Y, U, dY)
    if prob.kind == "ude":
        return kr.ude_adjoint(x, prob.grid, prob.S, prob.eta_t, prob.eta_v,
                              prob.t_max, prob.max_eta, Y, U, dY)
    return kr.node_adjoint(x, prob.grid, prob.S, prob.t_data_max,
                           prob.max_eta, Y, U, dY)


def _loss_and_grad(prob: _Problem, x: np.ndarray):
    # extreme trial parameters (e.g. K underflowing to 0 in log space) can
    # raise instead of producing inf; treat that exactly like divergence
    x = np.ascontiguousarray(x, dtype=np.float64)
    try:
        Y, U, ok, _t_fail = _forward(prob, x)
    except (ZeroDivisionError, OverflowError):
        ok = False
    if not ok:
        return SENTINEL_LOSS, np.full(len(x), np.nan)
    n = len(prob.grid)
    resid = Y - prob.target
    loss = float(np.mean(resid * resid))
    dY = (2.0 / n) * resid
    try:
        g = _adjoint(prob, x, Y, U, dY)
    except (ZeroDivisionError, OverflowError):
        return SENTINEL_LOSS, np.full(len(x), np.nan)
    return loss, np.asarray(g)


def _loss_only(prob: _Problem, x: np.ndarray) -> float:
    x = np.ascontiguousarray(x, dtype=np.float64)
    try:
        Y, _U, ok, _t = _forward(prob, x)
    except (ZeroDivisionError, OverflowError):
        ok = False
    if not ok:
        return SENTINEL_LOSS
    resid = Y - prob.target
    return float(np.mean(resid * resid))


def mse_loss(kind: str, params, series: IntensitySeries,
             cfg: TrainConfig | None = None, ctx: RhsContext | None = None):
    """Training loss at a model-layout parameter vector.

    With a plain vector this returns a float (the sentinel 1e12 if the
    trajectory diverges).  With an autodiff Var it returns a Var whose
    backward pass runs the discrete adjoint, so neuralnet.grad
    differentiates straight through the integrator.
    """
    cfg = cfg or TrainConfig()
    prob = _prepare(kind, series, cfg, ctx)
    if isinstance(params, ad.Var):
        x = np.ascontiguousarray(params.value, dtype=np.float64)
        if x.shape != (param_dim(kind),):
            raise ValueError(f"{kind} expects {param_dim(kind)} parameters")
        Y, U, ok, _t = _forward(prob, x)
        if not ok:
            loss_val = SENTINEL_LOSS
            gvec = np.full(len(x), np.nan)

            def vjp(gout, gvec=gvec):
                return np.asarray(gout) * gvec
        else:
            n = len(prob.grid)
            resid = Y - prob.target
            loss_val = float(np.mean(resid * resid))
            dY = (2.0 / n) * resid
            gvec = np.asarray(_adjoint(prob, x, Y, U, dY))

            def vjp(gout, gvec=gvec):
                return np.asarray(gout) * gvec

        return ad.custom(loss_val, (params,), (vjp,), name=f"mse_loss[{kind}]")
    x = np.ascontiguousarray(params, dtype=np.float64)
    if x.shape != (param_dim(kind),):
        raise ValueError(f"{kind} expects {param_dim(kind)} parameters")
    return _loss_only(prob, x)


def loss_and_grad(kind: str, params, series: IntensitySeries,
                  cfg: TrainConfig | None = None, ctx: RhsContext | None = None):
    """(loss, gradient) at a model-layout vector, via the discrete adjoint."""
    cfg = cfg or TrainConfig()
    prob = _prepare(kind, series, cfg, ctx)
    return _loss_and_grad(prob, np.asarray(params, dtype=np.float64))


def simulate_trajectory(kind: str, params, grid, ctx: RhsContext,
                        cfg: TrainConfig | None = None) -> Trajectory:
    """Integrate fitted parameters over an arbitrary grid with training ctx.

    Used for forecasting: ctx keeps the training-window normalization while
    the grid extends over the full horizon.
    """
    cfg = cfg or TrainConfig()
    grid = np.asarray(grid, dtype=np.float64)
    eta_t, eta_v = ctx.eta.nodes
    prob = _Problem(
        kind=kind, grid=grid, S=int(cfg.substeps_per_interval),
        eta_t=np.asarray(eta_t, dtype=np.float64),
        eta_v=np.asarray(eta_v, dtype=np.float64),
        t_max=float(ctx.params.t_max), t_data_max=float(ctx.t_data_max),
        max_eta=float(ctx.max_eta), M0=initial_state(ctx, float(grid[0])),
        target=np.zeros(len(grid)),
    )
    x = np.ascontiguousarray(params, dtype=np.float64)
    Y, _U, ok, t_fail = _forward(prob, x)
    if not ok:
        raise DivergenceError("trajectory diverged during simulation", time=t_fail)
    evals = 4 * prob.S * (len(grid) - 1)
    return Trajectory(t=grid.copy(), M=np.asarray(Y), rhs_evals=evals)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    rejections: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, 0)


def adam_step(x: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update.

    A non-finite gradient rejects the step: x and the moment estimates stay
    untouched, the rejection is counted, and the accepted flag comes back
    False.
    """
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        state.rejections += 1
        return x, False
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    mhat = state.m / (1.0 - beta1 ** state.t)
    vhat = state.v / (1.0 - beta2 ** state.t)
    return x - lr * mhat / (np.sqrt(vhat) + eps), True


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    n_iters: int
    made_progress: bool


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_list:
        gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
    else:
        gamma = 1.0
    r = gamma * q
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * np.dot(y, r)
        r += s * (a - b)
    return r


def lbfgs_minimize(f_and_g, x0, max_iters: int = 200, memory: int = 10,
                   armijo_c: float = 1e-4, max_backtracks: int = 30,
                   gtol: float = 1e-8, callback=None) -> LbfgsResult:
    """Limited-memory BFGS with Armijo backtracking (halving).

    The first trial step is min(1, 1/|g|) to survive badly scaled starts;
    afterwards the unit step comes first, as the two-loop direction is
    already scaled.  Curvature pairs with y's <= 1e-10 are skipped.  Returns
    the best iterate ever seen; made_progress is False when the very first
    line search already failed.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = f_and_g(x)
    if callback is not None:
        callback(0, f, x)
    best_x, best_f = x.copy(), f
    if not np.all(np.isfinite(g)):
        return LbfgsResult(best_x, best_f, 0, False)
    s_list, y_list, rho_list = [], [], []
    made_progress = False
    done = 0  # accepted iterations, not loop trips
    for it in range(1, max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            break
        d = -_two_loop(g, s_list, y_list, rho_list)
        descent = float(np.dot(g, d))
        if not np.all(np.isfinite(d)) or descent >= 0.0:
            d = -g
            descent = -gnorm * gnorm
        step = min(1.0, 1.0 / gnorm) if not s_list else 1.0
        accepted = False
        f_new = f
        g_new = g
        x_new = x
        for _bt in range(max_backtracks):
            x_try = x + step * d
            f_try, g_try = f_and_g(x_try)
            if f_try <= f + armijo_c * step * descent:
                x_new, f_new, g_new = x_try, f_try, g_try
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        made_progress = True
        done = it
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if np.all(np.isfinite(y)) and sy > 1e-10:
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f = f
            best_x = x.copy()
        if callback is not None:
            callback(it, f, x)
        if not np.all(np.isfinite(g)):
            break
    return LbfgsResult(best_x, best_f, done, made_progress)


# ---------------------------------------------------------------------------
# optimizer-space transforms for the mechanistic kinds


def _safe_exp(v: float) -> float:
    # overflow from a wild line-search trial maps to inf; the sentinel-loss
    # path then rejects that trial instead of crashing the fit
    with np.errstate(over="ignore"):
        return float(np.exp(v))


def _opt_transforms(kind: str, x0_model: np.ndarray):
    """Return (z0, to_model, grad_to_opt) for the optimizer's coordinates."""
    if kind == "ode":
        z0 = np.array([math.log(x0_model[0]), math.log(x0_model[1]),
                       x0_model[2], math.log(x0_model[3]), x0_model[4]])

        def to_model(z):
            return np.array([_safe_exp(z[0]), _safe_exp(z[1]), z[2],
                             _safe_exp(z[3]), z[4]])

        def grad_to_opt(z, gx):
            with np.errstate(over="ignore", invalid="ignore"):
                return np.array([gx[0] * _safe_exp(z[0]), gx[1] * _safe_exp(z[1]),
                                 gx[2], gx[3] * _safe_exp(z[3]), gx[4]])

        return z0, to_model, grad_to_opt
    if kind == "ode_no_feedback":
        z0 = np.array([math.log(x0_model[0]), math.log(x0_model[1]),
                       math.log(x0_model[3]), x0_model[4]])

        def to_model(z):
            return np.array([_safe_exp(z[0]), _safe_exp(z[1]), 0.0,
                             _safe_exp(z[2]), z[3]])

        def grad_to_opt(z, gx):
            with np.errstate(over="ignore", invalid="ignore"):
                return np.array([gx[0] * _safe_exp(z[0]), gx[1] * _safe_exp(z[1]),
                                 gx[3] * _safe_exp(z[2]), gx[4]])

        return z0, to_model, grad_to_opt
    identity = lambda z: np.asarray(z, dtype=np.float64)
    return x0_model.copy(), identity, lambda z, gx: gx


def initial_params(kind: str, cfg: TrainConfig) -> np.ndarray:
    """Model-layout starting vector: published rate constants, seeded nets."""
    if kind in ("ode", "ode_no_feedback"):
        kappa = DEFAULT_KAPPA if kind == "ode" else 0.0
        return np.array([DEFAULT_ALPHA0, DEFAULT_BETA, kappa, DEFAULT_K, DEFAULT_P_DECAY])
    if kind == "ude":
        theta = np.array([DEFAULT_ALPHA0, DEFAULT_BETA, DEFAULT_K, DEFAULT_P_DECAY])
        return np.concatenate([theta, neuralnet.init_params(UDE_SPEC, cfg.seed)])
    if kind == "node":
        return neuralnet.init_params(NODE_SPEC, cfg.seed)
    raise ValueError(f"unknown model kind {kind!r}")


def fit(kind: str, series: IntensitySeries, cfg: TrainConfig | None = None,
        ctx: RhsContext | None = None, x0: np.ndarray | None = None) -> FitResult:
    """Fit a model; best iterate ever evaluated wins, not the last one.

    ude/node run the two-phase schedule (cfg.adam_iters of Adam, then
    L-BFGS); the mechanistic kinds go straight to L-BFGS from the published
    constants, with alpha0, beta, K log-transformed so positivity is free.
    The loss trace records (iteration, phase, loss) for every Adam iterate
    and every accepted L-BFGS iterate; with defaults that is indices 0-299
    for Adam and 300 onward for L-BFGS.  Raises FitFailureError (trace
    attached) only when no iterate ever produced a real loss.
    """
    cfg = cfg or TrainConfig()
    t_start = time.perf_counter()
    prob = _prepare(kind, series, cfg, ctx)
    x0_model = initial_params(kind, cfg) if x0 is None else np.asarray(x0, dtype=np.float64)
    if x0_model.shape != (param_dim(kind),):
        raise ValueError(f"{kind} expects {param_dim(kind)} parameters")
    z, to_model, grad_to_opt = _opt_transforms(kind, x0_model)

    def f_and_g(zv):
        f, gx = _loss_and_grad(prob, to_model(zv))
        return f, grad_to_opt(zv, gx)

    trace: list = []
    best_f = _loss_only(prob, to_model(z))
    best_z = z.copy()

    # mechanistic constants get L-BFGS only; the networks warm up with Adam
    adam_iters = cfg.adam_iters if kind in ("ude", "node") else 0
    state = AdamState.zeros(len(z))
    for i in range(adam_iters):
        f, g = f_and_g(z)
        trace.append((i, "adam", f))
        if f < best_f:
            best_f = f
            best_z = z.copy()
        z, _accepted = adam_step(z, g, state, cfg.adam_lr)

    offset = adam_iters

    def on_lbfgs(it, f, zv):
        if it > 0:  # accepted iterations only; index continues the Adam phase
            trace.append((offset + it - 1, "lbfgs", f))

    if cfg.lbfgs_iters > 0:
        res = lbfgs_minimize(f_and_g, z, max_iters=cfg.lbfgs_iters,
                             memory=cfg.lbfgs_memory, callback=on_lbfgs)
        if res.f < best_f:
            best_f = res.f
            best_z = res.x.copy()

    if not math.isfinite(best_f) or best_f >= SENTINEL_LOSS:
        raise FitFailureError(
            f"{kind} fit never produced a finite loss", loss_trace=trace)

    x_best = to_model(best_z)
    Y, _U, ok, t_fail = _forward(prob, x_best)
    if not ok:  # cannot happen if best_f was finite, but belt and braces
        raise FitFailureError(f"best parameters diverge (t={t_fail:g})", loss_trace=trace)
    traj = Trajectory(t=prob.grid.copy(), M=np.asarray(Y),
                      rhs_evals=4 * prob.S * (len(prob.grid) - 1))
    nn_spec = UDE_SPEC if kind == "ude" else NODE_SPEC if kind == "node" else None
    return FitResult(
        kind=kind, params=x_best, trajectory=traj, loss_trace=trace,
        final_loss=best_f, wall_time=time.perf_counter() - t_start,
        seed=cfg.seed, nn_spec=nn_spec,
    )
