"""Dense tensors with reverse-mode differentiation on top of numpy.

Every primitive the towers need is a function here that takes ``Tensor``
inputs and returns a new ``Tensor`` remembering how to push a cotangent back
to its parents.  ``backward`` walks the graph from a scalar loss in reverse
topological order and sums gradients across fan-out.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeError",
    "OPS",
    "forward_op",
    "backward",
    "topological_order",
    "finite_difference_check",
    "no_grad",
    "tensor",
]


class ShapeError(ValueError):
    """Incompatible input shapes for an op."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside this block (evaluation, finite differences)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An immutable array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "fiub":
            raise TypeError(f"unsupported dtype {arr.dtype}")
        if arr.dtype.kind == "f" and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other, self), -1.0))

    def __rsub__(self, other):
        return add(_lift(other, self), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other, self))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like.dtype.kind == "f" else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, detail="not broadcastable") from None


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    b = _lift(b, a)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "mul", (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch axes") from None
    if b.ndim == 2 and a.ndim > 2:
        # [..., K] @ [K, N]: one flat GEMM instead of a batched loop
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[-1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, "matmul", (a, b), bw)
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), bw)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation. ``x`` is [C,H,W] or [N,C,H,W]; ``w`` is [O,C,kh,kw]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} padding={padding}")
    single = x.ndim == 3
    if x.ndim not in (3, 4) or w.ndim != 4 or x.shape[-3] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    xd = x.data[None] if single else x.data
    n, c, h, wd = xd.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]

    def bw(g):
        g4 = g[None] if single else g
        gx = gw = None
        if w.requires_grad:
            gw = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            cols = np.tensordot(g4, w.data, axes=([1], [0]))  # n,ho,wo,c,kh,kw
            gxp = np.zeros(xp.shape, dtype=g4.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + wd]
            gx = gxp[0] if single else gxp
        return gx, gw

    return _make(out, "conv2d", (x, w), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxh = g * gamma.data
            gx = inv * (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, gg, gb

    return _make(out, "layer_norm", (x, gamma, beta), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, "softmax", (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, "log_softmax", (x,), bw)


_GELU_C = float(np.sqrt(2.0 / np.pi))  # python float keeps float32 inputs float32


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = _as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _make(out, "gelu", (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return _make(y, "sigmoid", (x,), bw)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _make(y, "exp", (x,), lambda g: (g * y,))


def mean_pool(x: Tensor, axis=None, keepdims: bool = True) -> Tensor:
    """Global average over ``axis``."""
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, "mean_pool", (x,), bw)


def max_pool(x: Tensor, axis=None, keepdims: bool = True) -> Tensor:
    """Global max over ``axis``; ties share the gradient equally."""
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    m = x.data.max(axis=axes, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        hit = (x.data == m).astype(x.dtype)
        hit /= hit.sum(axis=axes, keepdims=True)
        return (hit * g,)

    return _make(out, "max_pool", (x,), bw)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), "sum", (x,), bw)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """x / ||x|| along ``axis``; callers reject zero-norm rows beforehand."""
    x = _as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    y = x.data / n

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return _make(y, "l2_normalize", (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes) if x.ndim else ()
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes, detail="axes are not a permutation")
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _make(out, "transpose", (x,), lambda g: (g.transpose(inv),))


def embed_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` [V,D] picked by integer ``ids`` of any shape."""
    table = _as_tensor(table)
    idx = np.asarray(ids.data if isinstance(ids, Tensor) else ids)
    if table.ndim != 2 or idx.dtype.kind not in "iu":
        raise ShapeError("embed_lookup", table.shape, idx.shape, detail="need [V,D] table, int ids")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embed_lookup", table.shape, idx.shape, detail="id out of range")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, "embed_lookup", (table,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", ts[0].shape, t.shape)
    out = np.concatenate([t.data for t in ts], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(out, "concat", ts, bw)


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "mul": mul,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "mean_pool": mean_pool,
    "max_pool": max_pool,
    "reshape": reshape,
    "transpose": transpose,
    "embed_lookup": embed_lookup,
    "concat": concat,
    # needed by the loss and the cosine head
    "sum": sum_,
    "log_softmax": log_softmax,
    "l2_normalize": l2_normalize,
    "exp": exp,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}") from None
    if kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` with respect to its leaves.

    Returns a dict keyed by leaf tensor (identity hashing).  Leaves listed in
    ``wrt`` with no path to the loss get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                result[node] = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if wrt is not None:
        for leaf in wrt:
            if leaf not in result:
                result[leaf] = np.zeros_like(leaf.data)
    return result


# Tensor.__hash__/__eq__ stay identity-based so tensors can key dicts.


_FD_FLOOR = 1e-3


def finite_difference_check(
    op,
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    seed: int = 0,
    **attrs,
) -> float:
    """Worst relative gap between ``backward`` and central differences.

    ``op`` is an op-kind string or any callable mapping the inputs to a
    tensor.  The output is contracted with a fixed random cotangent so
    every output element contributes.  Per input the error is
    ``max|analytic - numeric| / max(max|numeric|, max|analytic|, floor)``
    where the floor is 1e-3 of the largest gradient over all inputs (at
    least 1e-12).  It keeps gradients that are identically zero, such as a
    key bias under softmax, from turning rounding noise into a large ratio.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    fn = (lambda *xs: forward_op(op, *xs, **attrs)) if isinstance(op, str) else op
    leaves = [
        Tensor(np.array(t.data, dtype=np.float64), requires_grad=True)
        if t.dtype.kind == "f"
        else t
        for t in inputs
    ]
    out = fn(*leaves)
    rng = np.random.default_rng(seed)
    cot = rng.standard_normal(out.shape)
    loss = sum_(mul(out, Tensor(cot)))
    analytic = backward(loss, wrt=[t for t in leaves if t.requires_grad])

    def objective(k, arr):
        xs = list(leaves)
        xs[k] = Tensor(arr)
        with no_grad():
            return float((fn(*xs).data * cot).sum())

    pairs = []
    for k, leaf in enumerate(leaves):
        if not leaf.requires_grad:
            continue
        base = np.array(leaf.data)
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = objective(k, base.copy())
            flat[i] = orig - eps
            fm = objective(k, base.copy())
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * eps)
        a = analytic[leaf]
        pairs.append((a, numeric, max(np.abs(numeric).max(initial=0.0), np.abs(a).max(initial=0.0))))
    floor = max(_FD_FLOOR * max((sc for _, _, sc in pairs), default=0.0), 1e-12)
    worst = 0.0
    for a, numeric, sc in pairs:
        worst = max(worst, float(np.abs(a - numeric).max(initial=0.0) / max(sc, floor)))
    return worst
