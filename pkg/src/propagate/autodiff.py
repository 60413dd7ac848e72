"""Reverse-mode automatic differentiation on numpy values.

Tape style: every Var remembers its parent Vars plus one vector-Jacobian
closure per parent.  backward() walks the graph once in reverse topological
order and accumulates gradients.  Ops accept a mix of Vars and plain
numbers/arrays and return a Var only when at least one input is a Var, so the
same model code runs untraced at full numpy speed.

Subgradient conventions are pinned deliberately and tested:

* relu'(0) = 0
* d|x|/dx at 0 = 0 (sign(0))
* clamp passes gradient only strictly inside (lo, hi); at the kink and
  outside it is 0

Heavy composite operations (an unrolled ODE solve, say) plug in through
custom(): supply the forward value, the Var parents, and one VJP closure per
parent, and the node participates in backward() like any built-in.
"""

from __future__ import annotations

import numpy as np

from .errors import GradientError


class Var:
    """A node on the tape: a float64 value plus backward plumbing."""

    __slots__ = ("value", "grad", "_parents", "_vjps", "_name")

    def __init__(self, value, _parents=(), _vjps=(), _name="leaf"):
        v = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise GradientError(f"non-finite value produced by op '{_name}'")
        self.value = v
        self.grad = None
        self._parents = _parents
        self._vjps = _vjps
        self._name = _name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var({self.value!r}, op={self._name})"

    # operator sugar; the free functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value_of(x) -> np.ndarray:
    """Underlying float64 value of a Var or array-like."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to the given input shape (inverse of broadcasting)."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fval, vjp_a, vjp_b, name):
    av, bv = value_of(a), value_of(b)
    out = fval(av, bv)
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_a(g, av, bv), av.shape))
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_b(g, av, bv), bv.shape))
    if not parents:
        return out
    return Var(out, tuple(parents), tuple(vjps), name)


def _unary(x, fval, vjp, name):
    xv = value_of(x)
    out = fval(xv)
    if not isinstance(x, Var):
        return out
    return Var(out, (x,), (lambda g, xv=xv: vjp(g, xv),), name)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y), "div"
    )


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v: -g, "neg")


def exp(x):
    return _unary(x, np.exp, lambda g, v: g * np.exp(v), "exp")


def log(x):
    return _unary(x, np.log, lambda g, v: g / v, "log")


def log1p(x):
    return _unary(x, np.log1p, lambda g, v: g / (1.0 + v), "log1p")


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v: g * 0.5 / np.sqrt(v), "sqrt")


def square(x):
    return _unary(x, np.square, lambda g, v: g * 2.0 * v, "square")


def relu(x):
    # subgradient 0 at the kink: mask is v > 0, not v >= 0
    return _unary(
        x, lambda v: np.maximum(v, 0.0), lambda g, v: g * (v > 0.0).astype(np.float64), "relu"
    )


def abs_(x):
    # d|x|/dx pinned to sign(x); 0 at the origin
    return _unary(x, np.abs, lambda g, v: g * np.sign(v), "abs")


def clamp(x, lo: float, hi: float):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    if not lo < hi:
        raise ValueError("clamp needs lo < hi")
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, v: g * ((v > lo) & (v < hi)).astype(np.float64),
        "clamp",
    )


def floor_zero(x):
    """max(x, 0): the solver's non-negativity floor; same kink rule as relu."""
    return relu(x)


def dot(a, b):
    return _binary(
        a, b, lambda x, y: np.dot(x, y), lambda g, x, y: g * y, lambda g, x, y: g * x, "dot"
    )


def matvec(A, x):
    """A @ x for a 2-d A and 1-d x."""
    Av, xv = value_of(A), value_of(x)
    if Av.ndim != 2 or xv.ndim != 1:
        raise ValueError("matvec expects a matrix and a vector")
    out = Av @ xv
    parents, vjps = [], []
    if isinstance(A, Var):
        parents.append(A)
        vjps.append(lambda g, xv=xv: np.outer(g, xv))
    if isinstance(x, Var):
        parents.append(x)
        vjps.append(lambda g, Av=Av: Av.T @ g)
    if not parents:
        return out
    return Var(out, tuple(parents), tuple(vjps), "matvec")


def sum_(x):
    xv = value_of(x)
    if not isinstance(x, Var):
        return np.sum(xv)
    return Var(np.sum(xv), (x,), (lambda g, shape=xv.shape: np.broadcast_to(g, shape).copy(),), "sum")


def mean(x):
    xv = value_of(x)
    n = xv.size
    if not isinstance(x, Var):
        return np.mean(xv)
    return Var(
        np.mean(xv),
        (x,),
        (lambda g, shape=xv.shape, n=n: np.broadcast_to(g / n, shape).copy(),),
        "mean",
    )


def getitem(x, idx):
    xv = value_of(x)
    out = xv[idx]
    if not isinstance(x, Var):
        return out

    def vjp(g, shape=xv.shape, idx=idx):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return full

    return Var(out, (x,), (vjp,), "getitem")


def reshape(x, shape):
    xv = value_of(x)
    if not isinstance(x, Var):
        return xv.reshape(shape)
    return Var(
        xv.reshape(shape), (x,), (lambda g, s=xv.shape: np.asarray(g).reshape(s),), "reshape"
    )


def concat(parts):
    """Concatenate 1-d pieces; any Var input makes the result a Var."""
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals)
    if not any(isinstance(p, Var) for p in parts):
        return out
    sizes = [v.size for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents, vjps = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            lo, hi = offsets[i], offsets[i + 1]
            parents.append(p)
            vjps.append(lambda g, lo=lo, hi=hi, s=vals[i].shape: np.asarray(g)[lo:hi].reshape(s))
    return Var(out, tuple(parents), tuple(vjps), "concat")


def custom(value, parents, vjps, name="custom"):
    """Register an externally computed op on the tape.

    value: forward result (array-like).  parents: the Vars it depends on.
    vjps: one closure per parent mapping the output cotangent to that
    parent's gradient contribution.  Lengths must match.
    """
    parents = tuple(parents)
    vjps = tuple(vjps)
    if len(parents) != len(vjps):
        raise ValueError("custom op needs one vjp per parent")
    if not all(isinstance(p, Var) for p in parents):
        raise ValueError("custom op parents must be Vars")
    return Var(value, parents, vjps, name)


def _topo(root: Var) -> list[Var]:
    # iterative postorder; model graphs get deep enough to re-entry-limit recursion
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var) -> None:
    """Populate .grad on every Var reachable from root (a scalar)."""
    if not isinstance(root, Var):
        raise GradientError("backward needs a Var root")
    if root.value.ndim != 0 and root.value.size != 1:
        raise GradientError("backward root must be a scalar")
    order = _topo(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = np.asarray(vjp(g), dtype=np.float64)
            if not np.all(np.isfinite(contrib)):
                raise GradientError(f"non-finite gradient through op '{node._name}'")
            if parent.grad is None:
                parent.grad = contrib.reshape(parent.value.shape).copy()
            else:
                parent.grad = parent.grad + contrib.reshape(parent.value.shape)
