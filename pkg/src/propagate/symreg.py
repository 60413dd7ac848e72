"""Closed-form recovery of the learned feedback term.

The trained hybrid model hides its feedback inside a tiny network.  This
module samples that network along a trajectory, fits the samples with ridge
regression over a fixed 10-term dictionary of interpretable basis functions,
prunes to the strongest few terms, and labels each surviving term with the
propagation mechanism it encodes.

The regression variable is the normalized intensity m = M/max_eta, i.e. the
network's actual input, and the fit has no intercept and no feature
standardization: coefficient magnitudes are meant to be read directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import neuralnet
from .dynamics import OUTPUT_CLAMP, STATE_CLAMP_FACTOR, UDE_SPEC
from .integrate import Trajectory
from .neuralnet import MlpSpec

# dictionary order is a serialization contract; do not reorder
TERM_NAMES = (
    "m",
    "m^2",
    "m^3",
    "log(1+m)",
    "log(1+m)^2",
    "m*log(1+m)",
    "m/(1+m)",
    "m^2/(1+m)",
    "m/(1+m)^2",
    "sqrt(m)",
)

_FUNCS: dict[str, Callable] = {
    "m": lambda m: m,
    "m^2": lambda m: m * m,
    "m^3": lambda m: m * m * m,
    "log(1+m)": lambda m: np.log1p(m),
    "log(1+m)^2": lambda m: np.log1p(m) ** 2,
    "m*log(1+m)": lambda m: m * np.log1p(m),
    "m/(1+m)": lambda m: m / (1.0 + m),
    "m^2/(1+m)": lambda m: m * m / (1.0 + m),
    "m/(1+m)^2": lambda m: m / (1.0 + m) ** 2,
    "sqrt(m)": lambda m: np.sqrt(m),
}

MECHANISM_LABELS = {
    "m/(1+m)": "network saturation",
    "log(1+m)": "address-space exhaustion",
    "m": "security response",
    "m^2": "peer-to-peer propagation",
    "m*log(1+m)": "variant evolution",
}


@dataclass(frozen=True)
class BasisDictionary:
    """Ordered, named scalar functions of normalized intensity m >= 0."""

    terms: tuple[str, ...] = TERM_NAMES

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("term names must be unique")
        unknown = [t for t in self.terms if t not in _FUNCS]
        if unknown:
            raise ValueError(f"unknown basis terms: {unknown}")

    def design_matrix(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        X = np.empty((len(m), len(self.terms)))
        for j, name in enumerate(self.terms):
            X[:, j] = _FUNCS[name](m)
        return X

    def __len__(self):
        return len(self.terms)


class DesignSamples(NamedTuple):
    m: np.ndarray
    y: np.ndarray


@dataclass
class SymbolicModel:
    """A linear combination of dictionary terms approximating the network.

    coefficients preserves dictionary order.  domain records the m range the
    fit saw; evaluation outside it works but warns.
    """

    coefficients: dict[str, float]
    lam: float
    fit_rmse: float
    domain: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in self.coefficients:
            if name not in _FUNCS:
                raise ValueError(f"coefficient for unknown term {name!r}")
        if self.fit_rmse < 0:
            raise ValueError("fit_rmse must be non-negative")


def sample_network(nn_params, trajectory: Trajectory, max_eta: float,
                   spec: MlpSpec = UDE_SPEC) -> DesignSamples:
    """Evaluate the feedback network along a trajectory.

    One sample per grid point, order preserved: m_j is the clamped
    normalized state, y_j the network output clamped exactly as the dynamics
    clamp it.  These are the (input, output) pairs the regression explains.
    """
    if len(trajectory.t) == 0:
        raise ValueError("trajectory is empty")
    if max_eta <= 0:
        raise ValueError("max_eta must be positive")
    params = np.asarray(nn_params, dtype=np.float64)
    hi = STATE_CLAMP_FACTOR * max_eta
    m = np.clip(trajectory.M, 0.0, hi) / max_eta
    y = np.empty(len(m))
    for j, mj in enumerate(m):
        raw = float(neuralnet.forward(spec, params, np.array([mj]))[0])
        y[j] = min(max(raw, -OUTPUT_CLAMP), OUTPUT_CLAMP)
    return DesignSamples(m=m, y=y)


def ridge_fit(samples: DesignSamples, dictionary: BasisDictionary | None = None,
              lam: float = 1.0) -> SymbolicModel:
    """Solve (X'X + lam*I) w = X'y over the dictionary; no intercept.

    Needs at least 11 samples with at least 2 distinct m values.  With
    lam = 0 a rank-deficient design raises numpy's singularity error;
    lam > 0 cannot be singular.
    """
    dictionary = dictionary or BasisDictionary()
    m = np.asarray(samples.m, dtype=np.float64)
    y = np.asarray(samples.y, dtype=np.float64)
    if len(m) != len(y):
        raise ValueError("m and y lengths differ")
    if len(m) < 11:
        raise ValueError(f"need >= 11 samples, got {len(m)}")
    if len(np.unique(m)) < 2:
        raise ValueError("need >= 2 distinct m values")
    X = dictionary.design_matrix(m)
    A = X.T @ X + lam * np.eye(len(dictionary))
    b = X.T @ y
    w = np.linalg.solve(A, b)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("ridge system is numerically singular")
    resid = X @ w - y
    rmse = float(np.sqrt(np.mean(resid * resid)))
    coeffs = {name: float(w[j]) for j, name in enumerate(dictionary.terms)}
    return SymbolicModel(coefficients=coeffs, lam=lam, fit_rmse=rmse,
                         domain=(float(np.min(m)), float(np.max(m))))


def simplify(model: SymbolicModel, samples: DesignSamples, k: int) -> SymbolicModel:
    """Keep the k strongest terms and refit with the same lambda.

    Strength is mean absolute contribution |w_i| * mean_j |phi_i(m_j)|:
    basis functions differ wildly in scale on [0, 1], so raw coefficient
    size would misrank them.  Kept terms stay in dictionary order, which
    makes k = len(model) an exact identity.
    """
    names = list(model.coefficients.keys())
    if k > len(names):
        raise ValueError(f"k={k} exceeds the {len(names)}-term dictionary")
    m = np.asarray(samples.m, dtype=np.float64)
    y = np.asarray(samples.y, dtype=np.float64)
    if k == 0:
        return SymbolicModel(coefficients={}, lam=model.lam,
                             fit_rmse=float(np.sqrt(np.mean(y * y))),
                             domain=model.domain)
    dictionary = BasisDictionary(tuple(names))
    X = dictionary.design_matrix(m)
    w = np.array([model.coefficients[n] for n in names])
    contribution = np.abs(w) * np.mean(np.abs(X), axis=0)
    ranked = np.argsort(-contribution, kind="stable")
    keep = np.sort(ranked[:k])
    sub = BasisDictionary(tuple(names[j] for j in keep))
    Xs = X[:, keep]
    A = Xs.T @ Xs + model.lam * np.eye(k)
    ws = np.linalg.solve(A, Xs.T @ y)
    resid = Xs @ ws - y
    rmse = float(np.sqrt(np.mean(resid * resid)))
    coeffs = {name: float(ws[j]) for j, name in enumerate(sub.terms)}
    return SymbolicModel(coefficients=coeffs, lam=model.lam, fit_rmse=rmse,
                         domain=(float(np.min(m)), float(np.max(m))))


def evaluate_symbolic(model: SymbolicModel, m):
    """Sum of coefficient * basis term at m (scalar or array).

    Evaluation outside the fitted domain is extrapolation; it proceeds but
    warns, because nothing anchored the fit out there.
    """
    m_arr = np.asarray(m, dtype=np.float64)
    lo, hi = model.domain
    if np.any(m_arr < lo) or np.any(m_arr > hi):
        warnings.warn(
            f"evaluating symbolic model outside fitted domain [{lo:g}, {hi:g}]",
            stacklevel=2)
    out = np.zeros_like(m_arr, dtype=np.float64)
    for name, w in model.coefficients.items():
        out = out + w * _FUNCS[name](m_arr)
    if m_arr.ndim == 0:
        return float(out)
    return out


@dataclass
class TermRow:
    term: str
    coefficient: float
    sign_class: str  # "suppressing" | "amplifying"
    mechanism: str


def term_report(model: SymbolicModel) -> list[TermRow]:
    """One row per nonzero term: sign class and mechanism label.

    Negative coefficients suppress propagation, positive ones amplify it.
    The five canonically named terms carry their mechanism labels; anything
    else is "unmapped".  Exactly-zero coefficients are omitted.
    """
    if not model.coefficients:
        raise ValueError("term_report needs a non-empty model")
    rows = []
    for name, w in model.coefficients.items():
        if w == 0.0:
            continue
        rows.append(TermRow(
            term=name,
            coefficient=w,
            sign_class="suppressing" if w < 0 else "amplifying",
            mechanism=MECHANISM_LABELS.get(name, "unmapped"),
        ))
    return rows


def render_expression(model: SymbolicModel, var: str = "m") -> str:
    """Human-readable form like 'g(m) = -2608.692*m/(1+m) - 2113.3*m + ...'."""
    if not model.coefficients:
        return f"g({var}) = 0"
    parts = []
    for name, w in model.coefficients.items():
        if w == 0.0:
            continue
        term = name.replace("m", var) if var != "m" else name
        mag = f"{abs(w):.6g}*{term}"
        if not parts:
            parts.append(mag if w > 0 else f"-{mag}")
        else:
            parts.append(f"+ {mag}" if w > 0 else f"- {mag}")
    if not parts:
        return f"g({var}) = 0"
    return f"g({var}) = " + " ".join(parts)
