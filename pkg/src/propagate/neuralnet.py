"""Small dense ReLU networks on flat parameter vectors.

Parameters live in one contiguous float64 vector so optimizers never care
about layer structure.  Layout per layer: weight matrix (n_out, n_in) in row
major order, then the n_out biases.  forward() accepts the vector either as
a plain ndarray (fast, untraced) or as an autodiff Var (traced), and the two
paths share every line of arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, GradientError


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected ReLU network.

    layer_widths runs input -> hidden... -> output; the final layer is
    linear.  Only ReLU hidden activations are supported, on purpose: the
    downstream symbolic-recovery step leans on piecewise linearity.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


def param_count(spec: MlpSpec) -> int:
    widths = spec.layer_widths
    return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))


def _layer_slices(spec: MlpSpec):
    """Yield (w_slice, b_slice, n_in, n_out) per layer over the flat vector."""
    off = 0
    widths = spec.layer_widths
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        w = slice(off, off + n_in * n_out)
        off += n_in * n_out
        b = slice(off, off + n_out)
        off += n_out
        yield w, b, n_in, n_out


def init_params(spec: MlpSpec, seed: int = 0) -> np.ndarray:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(spec), dtype=np.float64)
    for w, _b, n_in, n_out in _layer_slices(spec):
        limit = np.sqrt(6.0 / (n_in + n_out))
        params[w] = rng.uniform(-limit, limit, size=n_in * n_out)
    return params


def unflatten(spec: MlpSpec, params) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (W, b) views (copies for Vars)."""
    vec = ad.value_of(params)
    if vec.shape != (param_count(spec),):
        raise ValueError(f"expected {param_count(spec)} parameters, got {vec.shape}")
    out = []
    for w, b, n_in, n_out in _layer_slices(spec):
        out.append((vec[w].reshape(n_out, n_in), vec[b]))
    return out


def flatten(layers) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts)


def forward(spec: MlpSpec, params, x):
    """Evaluate the network on a single input vector x.

    params may be an ndarray (returns ndarray) or an autodiff Var (returns a
    Var wired into the tape).  x is always treated as a constant.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.shape != (spec.layer_widths[0],):
        raise ValueError(f"input must have shape ({spec.layer_widths[0]},), got {h.shape}")
    traced = isinstance(params, ad.Var)
    if not traced:
        params = np.asarray(params, dtype=np.float64)
    if ad.value_of(params).shape != (param_count(spec),):
        raise ValueError(f"expected {param_count(spec)} parameters")
    n_layers = spec.n_layers
    for i, (w, b, n_in, n_out) in enumerate(_layer_slices(spec)):
        if traced:
            W = ad.reshape(ad.getitem(params, w), (n_out, n_in))
            bias = ad.getitem(params, b)
            h = ad.add(ad.matvec(W, h), bias)
            if i < n_layers - 1:
                h = ad.relu(h)
        else:
            W = params[w].reshape(n_out, n_in)
            h = W @ h + params[b]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
    return h


def grad(loss, params) -> np.ndarray:
    """Gradient of a scalar-valued loss(params_var) at the given vector.

    loss receives the parameters wrapped as a Var and must build its result
    through autodiff ops (custom() ops included).  Returns a dense vector the
    same length as params; parameters the loss never touches get zeros.
    """
    p = ad.Var(np.asarray(params, dtype=np.float64))
    out = loss(p)
    if not isinstance(out, ad.Var):
        raise GradientError("loss did not produce a traced value; gradient path is broken")
    if out.value.ndim != 0 and out.value.size != 1:
        raise GradientError("loss must be scalar")
    ad.backward(out)
    if p.grad is None:
        return np.zeros_like(p.value)
    return np.asarray(p.grad, dtype=np.float64).reshape(p.value.shape)


# ---------------------------------------------------------------------------
# checkpoints: plain text, one parameter per line, exact via repr round-trip


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray, seed: int | None = None) -> None:
    vec = np.asarray(params, dtype=np.float64)
    if vec.shape != (param_count(spec),):
        raise ValueError("parameter vector does not match the spec")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("widths: " + ",".join(str(w) for w in spec.layer_widths) + "\n")
        fh.write(f"activation: {spec.activation}\n")
        fh.write(f"seed: {'none' if seed is None else int(seed)}\n")
        for v in vec:
            fh.write(repr(float(v)) + "\n")


def load_checkpoint(path) -> tuple[MlpSpec, np.ndarray, int | None]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    try:
        if not lines[0].startswith("widths: ") or not lines[1].startswith("activation: "):
            raise CheckpointError(f"{path}: not a network checkpoint")
        widths = tuple(int(w) for w in lines[0][len("widths: "):].split(","))
        activation = lines[1][len("activation: "):].strip()
        seed_s = lines[2][len("seed: "):].strip()
        seed = None if seed_s == "none" else int(seed_s)
        spec = MlpSpec(widths, activation)
        vec = np.array([float(s) for s in lines[3:3 + param_count(spec)]], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if len(vec) != param_count(spec):
        raise CheckpointError(f"{path}: expected {param_count(spec)} parameters, found {len(vec)}")
    return spec, vec, seed
