"""Right-hand sides of the three propagation models.

State M(t) is the instantaneous scan intensity (events per bin width, same
units as the smoothed signal).  All three models share the external forcing
eta(t) built from the observed series; they differ in how internal dynamics
are represented:

* mechanistic: time-decaying logistic growth, quadratic suppression, and an
  analytic log feedback term
* hybrid (ude): the mechanistic skeleton with the log feedback replaced by a
  small network N(M / max_eta)
* black box (node): a single network for the entire derivative

Conventions carried by every evaluation, pinned here and mirrored exactly by
the jitted training kernels:

* mechanistic rate constants enter through abs(); sign never flips dynamics
* neural models clamp state to [0, 5 * max_eta] before use, and clamp the
  network output to +-1000; the plain mechanistic model only floors M at 0
* a non-finite state or a non-finite raw network output is an error, not
  something to clamp away
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import neuralnet
from .errors import DivergenceError
from .ingest import IntensitySeries, Interpolant, make_interpolant
from .neuralnet import MlpSpec

UDE_WIDTHS = (1, 10, 1)
NODE_WIDTHS = (2, 16, 16, 1)
UDE_SPEC = MlpSpec(UDE_WIDTHS)
NODE_SPEC = MlpSpec(NODE_WIDTHS)

STATE_CLAMP_FACTOR = 5.0   # neural-model state ceiling, in units of max_eta
OUTPUT_CLAMP = 1000.0      # network output bound, intensity per day

# Published fit constants for the mechanistic model (Code Red v2 scan data).
DEFAULT_ALPHA0 = 0.0501
DEFAULT_BETA = 1e-4
DEFAULT_KAPPA = 0.005
DEFAULT_K = 1e5
DEFAULT_P_DECAY = 0.48

MODEL_KINDS = ("ode", "ode_no_feedback", "ude", "node")


@dataclass
class MechanisticParams:
    """Rate constants of the mechanistic model.

    t_max is the span of the fitted window in days; it scales the growth
    decay and is never optimized.  K must be positive outright; the other
    constants may be stored signed and are rectified with abs() at
    evaluation time.
    """

    alpha0: float
    beta: float
    kappa: float
    K: float
    p_decay: float
    t_max: float

    def __post_init__(self):
        vals = (self.alpha0, self.beta, self.kappa, self.K, self.p_decay, self.t_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("mechanistic parameters must be finite")
        if self.K <= 0:
            raise ValueError("carrying capacity K must be positive")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")

    @classmethod
    def defaults(cls, t_max: float) -> "MechanisticParams":
        return cls(DEFAULT_ALPHA0, DEFAULT_BETA, DEFAULT_KAPPA, DEFAULT_K, DEFAULT_P_DECAY, t_max)

    def without_feedback(self) -> "MechanisticParams":
        return replace(self, kappa=0.0)


@dataclass
class RhsContext:
    """Everything a right-hand side needs besides (M, t).

    max_eta and t_data_max are the normalization constants baked in at fit
    time; when forecasting they deliberately stay those of the training
    window rather than being refreshed from the full horizon.
    """

    eta: Interpolant
    params: MechanisticParams
    max_eta: float
    t_data_max: float
    nn_params: np.ndarray | None = None

    def __post_init__(self):
        if not (math.isfinite(self.max_eta) and self.max_eta > 0):
            raise ValueError("max_eta must be positive and finite")
        if not (math.isfinite(self.t_data_max) and self.t_data_max > 0):
            raise ValueError("t_data_max must be positive and finite")


def context_from_series(
    series: IntensitySeries,
    params: MechanisticParams | None = None,
    nn_params: np.ndarray | None = None,
) -> RhsContext:
    """Standard context: eta from the smoothed channel, constants from the grid."""
    series.validate()
    eta = make_interpolant(series, use_smoothed=True)
    t_data_max = float(series.t[-1])
    max_eta = float(np.max(series.smoothed))
    if max_eta <= 0:
        max_eta = 1.0  # all-zero signal; keep normalization usable
    if params is None:
        params = MechanisticParams.defaults(t_max=t_data_max)
    return RhsContext(eta=eta, params=params, max_eta=max_eta,
                      t_data_max=t_data_max, nn_params=nn_params)


def initial_state(ctx: RhsContext, t0: float) -> float:
    """M(t0): the observed intensity at the left edge, floored at one event."""
    return max(float(ctx.eta(t0)), 1.0)


def alpha_at(params: MechanisticParams, t: float) -> float:
    """Time-decaying growth rate alpha0 * exp(-p_decay * t / t_max)."""
    a0 = abs(params.alpha0)
    pd = abs(params.p_decay)
    return a0 * math.exp(-pd * t / params.t_max)


def rhs_ode(M: float, t: float, ctx: RhsContext) -> float:
    """Mechanistic derivative at (M, t).

    Growth saturates against K, eta(t) forces from outside, -beta M^2
    suppresses, +kappa M log(1+M) is the analytic feedback.  M is floored at
    zero; there is no upper clamp here.
    """
    if not math.isfinite(M):
        raise DivergenceError("non-finite state in mechanistic rhs", time=t)
    p = ctx.params
    Mp = M if M > 0.0 else 0.0
    at = alpha_at(p, t)
    b = abs(p.beta)
    k = abs(p.kappa)
    growth = at * Mp * (1.0 - Mp / p.K)
    external = ctx.eta(t)
    suppression = b * Mp * Mp
    feedback = k * Mp * math.log1p(Mp)
    return growth + external - suppression + feedback


def rhs_ude(M: float, t: float, ctx: RhsContext) -> float:
    """Hybrid derivative: mechanistic skeleton + learned feedback N(M/max_eta).

    The analytic kappa term is gone; its slot is the network.  State is
    clamped to [0, 5 max_eta] before every use, the rate constants
    (alpha0, beta, K, p_decay) pass through abs(), and the raw network
    output must be finite before it is clamped to +-1000.
    """
    if not math.isfinite(M):
        raise DivergenceError("non-finite state in hybrid rhs", time=t)
    if ctx.nn_params is None:
        raise ValueError("hybrid rhs needs nn_params in the context")
    p = ctx.params
    hi = STATE_CLAMP_FACTOR * ctx.max_eta
    Mc = min(max(M, 0.0), hi)
    a0 = abs(p.alpha0)
    b = abs(p.beta)
    K = abs(p.K)
    pd = abs(p.p_decay)
    at = a0 * math.exp(-pd * t / p.t_max)
    growth = at * Mc * (1.0 - Mc / K)
    external = ctx.eta(t)
    suppression = b * Mc * Mc
    m = Mc / ctx.max_eta
    raw = float(neuralnet.forward(UDE_SPEC, ctx.nn_params, np.array([m]))[0])
    if not math.isfinite(raw):
        raise DivergenceError("network output diverged in hybrid rhs", time=t)
    learned = min(max(raw, -OUTPUT_CLAMP), OUTPUT_CLAMP)
    return growth + external - suppression + learned


def rhs_node(M: float, t: float, ctx: RhsContext) -> float:
    """Black-box derivative: clamp(N(M/max_eta, t/t_data_max), +-1000).

    No mechanistic structure and no explicit forcing; the network sees
    normalized state and normalized time and answers with the whole
    derivative.
    """
    if not math.isfinite(M):
        raise DivergenceError("non-finite state in black-box rhs", time=t)
    if ctx.nn_params is None:
        raise ValueError("black-box rhs needs nn_params in the context")
    hi = STATE_CLAMP_FACTOR * ctx.max_eta
    Mc = min(max(M, 0.0), hi)
    x = np.array([Mc / ctx.max_eta, t / ctx.t_data_max])
    raw = float(neuralnet.forward(NODE_SPEC, ctx.nn_params, x)[0])
    if not math.isfinite(raw):
        raise DivergenceError("network output diverged in black-box rhs", time=t)
    return min(max(raw, -OUTPUT_CLAMP), OUTPUT_CLAMP)


def make_rhs(kind: str, ctx: RhsContext):
    """Close a (M, t) -> dM/dt callable over the context for the given kind."""
    if kind == "ode_no_feedback":
        cut = replace(ctx, params=ctx.params.without_feedback())
        return lambda M, t: rhs_ode(M, t, cut)
    if kind == "ode":
        return lambda M, t: rhs_ode(M, t, ctx)
    if kind == "ude":
        return lambda M, t: rhs_ude(M, t, ctx)
    if kind == "node":
        return lambda M, t: rhs_node(M, t, ctx)
    raise ValueError(f"unknown model kind {kind!r}")
