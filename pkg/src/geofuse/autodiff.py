"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Each op records its parents and a vector-Jacobian closure on the result node.
``backward`` runs a single reverse topological sweep from a scalar loss and
accumulates d(loss)/d(param) into every trainable :class:`Parameter`'s
``grad`` buffer. Gradients accumulate across repeated backward calls until
``zero_grads`` (or an optimizer step) clears them.

Everything is float64 and CPU-only. Shapes are validated eagerly so errors
surface at the op that caused them, not three matmuls later.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def _f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Parameter:
    """Named, optionally trainable array with a persistent gradient buffer."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        self.name = name
        self.value = _f64(value).copy()
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def tensor(self) -> "Tensor":
        """Fresh graph leaf viewing the current value."""
        return Tensor(self.value, requires_grad=self.trainable, param=self)

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name}, shape={self.value.shape}{flag})"


class Tensor:
    """A node in the recorded computation graph."""

    __slots__ = ("data", "parents", "vjp", "requires_grad", "param")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[Array], tuple[Array | None, ...]] | None = None,
        requires_grad: bool = False,
        param: Parameter | None = None,
    ):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _f64(data)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(x) -> Tensor:
    """Leaf with no gradient flow."""
    return Tensor(_f64(x))


def _make(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    # Constant subgraphs are folded: no parents kept, no vjp stored.
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents=parents, vjp=vjp, requires_grad=True)
    return Tensor(data)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and broadcast ops
# ---------------------------------------------------------------------------

def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _make(a.data + float(s), (a,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (..., D) + b (D,), broadcast over all leading axes."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last dim of {x.shape}")
    d = b.shape[0]

    def vjp(g: Array):
        return g, g.reshape(-1, d).sum(axis=0)

    return _make(x.data + b.data, (x, b), vjp)


def add_const(x: Tensor, c) -> Tensor:
    """x + constant array; the constant may broadcast but not grow the result."""
    c = _f64(c)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise ShapeError(f"add_const: constant {c.shape} would broadcast {x.shape} up")
    return _make(x.data + c, (x,), lambda g: (g,))


def mul_const(x: Tensor, c) -> Tensor:
    c = _f64(c)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise ShapeError(f"mul_const: constant {c.shape} would broadcast {x.shape} up")
    return _make(x.data * c, (x,), lambda g: (g * c,))


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading axis of size n."""
    data = np.broadcast_to(x.data[None], (n,) + x.shape).copy()
    return _make(data, (x,), lambda g: (g.sum(axis=0),))


def expand_axis(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a repeated axis of size n at position ``axis``."""
    axis = axis % (x.ndim + 1)
    shape = x.shape[:axis] + (n,) + x.shape[axis:]
    data = np.broadcast_to(np.expand_dims(x.data, axis), shape).copy()
    return _make(data, (x,), lambda g: (g.sum(axis=axis),))


# ---------------------------------------------------------------------------
# linear algebra and layout ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product (..., m, k) @ (..., k, n); leading dims broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc

    def vjp(g: Array):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), vjp)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows along axis 1 of a (B, L, D) tensor. idx entries must be unique."""
    if x.ndim != 3:
        raise ShapeError(f"gather_rows expects (B, L, D), got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g: Array):
        z = np.zeros_like(x.data)
        z[:, idx, :] = g
        return (z,)

    return _make(x.data[:, idx, :], (x,), vjp)


def put_rows(x: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of x with rows at unique axis-1 positions ``idx`` replaced by ``rows``."""
    if x.ndim != 3:
        raise ShapeError(f"put_rows expects (B, L, D), got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    want = (x.shape[0], len(idx), x.shape[2])
    if rows.shape != want:
        raise ShapeError(f"put_rows: rows {rows.shape}, expected {want}")
    data = x.data.copy()
    data[:, idx, :] = rows.data

    def vjp(g: Array):
        gx = g.copy()
        gx[:, idx, :] = 0.0
        return gx, g[:, idx, :]

    return _make(data, (x, rows), vjp)


def pick(x: Tensor, idx) -> Tensor:
    """x (B, V), idx (B,) -> (B,) values x[i, idx[i]]."""
    if x.ndim != 2:
        raise ShapeError(f"pick expects (B, V), got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    b, v = x.shape
    if idx.shape != (b,):
        raise ShapeError(f"pick: index shape {idx.shape}, expected ({b},)")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ContractError(f"pick: index out of range for {v} columns")
    rows = np.arange(b)

    def vjp(g: Array):
        z = np.zeros_like(x.data)
        z[rows, idx] = g
        return (z,)

    return _make(x.data[rows, idx], (x,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim

    def vjp(g: Array):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), vjp)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]

    def vjp(g: Array):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),)

    return _make(x.data.mean(axis=axis), (x,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities and normalizers
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Smooth tanh-form gelu; keeps finite-difference checks clean."""
    v = x.data
    sq = v * v
    t = np.tanh(_GELU_C * (v + 0.044715 * (sq * v)))
    y = 0.5 * v * (1.0 + t)

    def vjp(g: Array):
        du = _GELU_C * (1.0 + 0.134145 * sq)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return _make(y, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0.0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def softmax_lastdim(x: Tensor) -> Tensor:
    """Stabilized softmax over the last axis; rows sum to 1."""
    if x.shape[-1] == 0:
        raise ShapeError("softmax_lastdim: empty last dimension")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: Array):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), vjp)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if x.shape[-1] == 0:
        raise ShapeError("log_softmax_lastdim: empty last dimension")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def vjp(g: Array):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gain.data + bias.data

    def vjp(g: Array):
        gy = g * gain.data
        gx = (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True)) * inv
        ggain = (g * y).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), vjp)


def normalize_lastdim(x: Tensor, eps: float = 1e-8) -> Tensor:
    """x / (||x||_2 + eps) along the last axis; eps guards the zero vector."""
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = n + eps
    y = x.data / denom

    def vjp(g: Array):
        # d/dx [x / (n+eps)] applied to g; n_safe avoids 0/0 at the origin,
        # where the true derivative of the guarded form is 1/eps * I.
        n_safe = np.maximum(n, 1e-300)
        dot = (x.data * g).sum(axis=-1, keepdims=True)
        return (g / denom - x.data * dot / (n_safe * denom * denom),)

    return _make(y, (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass and gradient utilities
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into trainable Parameters reachable from loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None and node.param.trainable:
            node.param.grad += g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    for p in params:
        p.grad[...] = 0.0


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    samples_per_param: int = 4,
    seed: int = 0,
    atol: float = 1e-8,
) -> float:
    """Max relative error between recorded gradients and central differences.

    ``f`` must rebuild the graph from the current parameter values on every
    call and be deterministic. Frozen parameters are treated as constants of
    the computation: both sides are zero by definition, so they contribute an
    error of exactly 0. A NaN on either side reports as inf.

    Central differences carry roundoff noise of roughly machine_eps/eps, so a
    coordinate where both sides sit below ``atol`` is counted as agreeing: a
    truly zero derivative (a key bias under softmax, say) measures as ~1e-10
    of noise, and dividing noise by noise would report a fake mismatch.
    """
    zero_grads(params)
    backward(f())
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        a_flat = a.reshape(-1)
        k = min(samples_per_param, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False) if k else []
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            cd = (fp - fm) / (2.0 * eps)
            an = float(a_flat[i])
            if not (math.isfinite(cd) and math.isfinite(an)):
                return float("inf")
            if abs(an) < atol and abs(cd) < atol:
                continue
            err = abs(an - cd) / (abs(an) + abs(cd) + 1e-12)
            worst = max(worst, err)
    return worst
