"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op checks its output for NaN/Inf and raises instead of propagating
garbage. When any input has ``requires_grad``, the op records a tape node;
``backward`` walks the recorded nodes once, in reverse topological order,
and then clears them, so a second ``backward`` without a fresh forward
pass raises :class:`~mixfed.errors.NoTape`.

Tensors and their tapes are single-threaded: each training client builds
its own graphs. Gradient recording can be suspended with :func:`no_grad`
(per-thread), which is how evaluation-time forwards stay cheap.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteValue, NonScalarLoss, NoTape, ShapeMismatch

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording for the current thread inside the block."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class TapeNode:
    """One recorded op: maps the output gradient to the input gradients."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteValue("tensor created with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def var(self, axis=None):
        return variance(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return absolute(self)

    def backward(self):
        backward(self)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, parents, backward_fn) -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out._node = None
    out.requires_grad = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# forward primitives


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out_data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out_data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    out_data = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _result(out_data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return _result(out_data, "div", (a, b), bw)


def scale(x, s: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(x, float(s))


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out_data = ad @ bd

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _result(out_data, "matmul", (a, b), bw)


def relu(x) -> Tensor:
    x = _coerce(x)
    xd = x.data
    out_data = np.maximum(xd, 0.0)

    def bw(g):
        return (g * (xd > 0.0),)

    return _result(out_data, "relu", (x,), bw)


def exp(x) -> Tensor:
    x = _coerce(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def bw(g):
        return (g * out_data,)

    return _result(out_data, "exp", (x,), bw)


def log(x) -> Tensor:
    x = _coerce(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(xd)

    def bw(g):
        return (g / xd,)

    return _result(out_data, "log", (x,), bw)


def absolute(x) -> Tensor:
    x = _coerce(x)
    xd = x.data
    out_data = np.abs(xd)

    def bw(g):
        return (g * np.sign(xd),)

    return _result(out_data, "abs", (x,), bw)


def maximum(x, floor: float) -> Tensor:
    """Elementwise clamp from below by a scalar floor."""
    x = _coerce(x)
    xd = x.data
    out_data = np.maximum(xd, floor)

    def bw(g):
        return (g * (xd > floor),)

    return _result(out_data, "maximum", (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _result(out_data, "softmax", (x,), bw)


def tsum(x, axis=None) -> Tensor:
    x = _coerce(x)
    shape = x.shape
    out_data = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, shape).copy(),)

    return _result(out_data, "sum", (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = _coerce(x)
    shape = x.shape
    out_data = x.data.mean(axis=axis)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        ge = np.expand_dims(g / count, axes)
        return (np.broadcast_to(ge, shape).copy(),)

    return _result(out_data, "mean", (x,), bw)


def variance(x, axis=None) -> Tensor:
    """Population variance (divides by N, not N-1)."""
    x = _coerce(x)
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    centered = xd - mu
    out_data = (centered * centered).mean(axis=axis)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))

    def bw(g):
        if axis is None:
            ge = g
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            ge = np.expand_dims(g, axes)
        return (2.0 * centered * ge / count,)

    return _result(out_data, "variance", (x,), bw)


def max_reduce(x, axis: int = -1) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    x = _coerce(x)
    xd = x.data
    out_data = xd.max(axis=axis)
    idx = xd.argmax(axis=axis)

    def bw(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (gx,)

    return _result(out_data, "max", (x,), bw)


def min_reduce(x, axis: int = -1) -> Tensor:
    """Min along one axis; ties route the gradient to the first minimum."""
    x = _coerce(x)
    xd = x.data
    out_data = xd.min(axis=axis)
    idx = xd.argmin(axis=axis)

    def bw(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (gx,)

    return _result(out_data, "min", (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    old = x.shape
    out_data = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(old),)

    return _result(out_data, "reshape", (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out_data, "concat", tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("stack of zero tensors")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return _result(out_data, "stack", tuple(tensors), bw)


def global_average_pool(x) -> Tensor:
    """Spatial mean of a C×H×W map (or B×C×H×W batch) → C (or B×C) vector."""
    x = _coerce(x)
    if x.ndim not in (3, 4):
        raise ShapeMismatch(f"global_average_pool expects 3-D or 4-D input, got {x.shape}")
    hw = x.shape[-1] * x.shape[-2]
    out_data = x.data.mean(axis=(-1, -2))
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g[..., None, None] / hw, shape).copy(),)

    return _result(out_data, "global_average_pool", (x,), bw)


# ---------------------------------------------------------------------------
# convolution (stride 1, zero "same" padding, odd kernels)


def _im2col(x4: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B,C,H,W) → (B*H*W, C*kh*kw) patch matrix under same zero padding."""
    b, c, h, w = x4.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph : ph + h, pw : pw + w] = x4
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * kh * kw)


def _conv_forward(x4: np.ndarray, w: np.ndarray):
    b, _, h, wd = x4.shape
    co = w.shape[0]
    cols = _im2col(x4, w.shape[2], w.shape[3])
    out = cols @ w.reshape(co, -1).T
    return out.reshape(b, h, wd, co).transpose(0, 3, 1, 2), cols


def conv2d(x, w, b=None) -> Tensor:
    """2-D convolution, stride 1, zero padding that preserves H×W.

    ``x`` is C×H×W or B×C×H×W, ``w`` is C_out×C_in×kh×kw with odd kernel
    extents, ``b`` an optional C_out bias.
    """
    x, w = _coerce(x), _coerce(w)
    if b is not None:
        b = _coerce(b)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects (B,C,H,W) and (Co,Ci,kh,kw), got {x.shape}, {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d channel mismatch: input {xd.shape[1]}, kernel {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch("conv2d supports odd kernel extents only")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")

    out_data, cols = _conv_forward(xd, w.data)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None]
    if squeeze:
        out_data = out_data[0]
    wd = w.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g4 = g[None] if squeeze else g
        bsz, co, h, wdt = g4.shape
        gflat = g4.transpose(0, 2, 3, 1).reshape(bsz * h * wdt, co)
        gw = (gflat.T @ cols).reshape(wd.shape)
        # input gradient = same-padded convolution of g with the flipped,
        # in/out-transposed kernel (exact adjoint for odd kernels, stride 1)
        wt = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx, _ = _conv_forward(g4, np.ascontiguousarray(wt))
        if squeeze:
            gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return _result(out_data, "conv2d", parents, bw)


# ---------------------------------------------------------------------------
# gradient reversal


def grl(x, lam: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    x = _coerce(x)
    lam = float(lam)

    def bw(g):
        return (-lam * g,)

    return _result(x.data, "grl", (x,), bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Consumes the tape: the recorded nodes are cleared afterwards, so calling
    backward twice on the same forward pass raises NoTape.
    """
    if not isinstance(loss, Tensor):
        raise NoTape("backward expects a Tensor loss")
    if loss.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if loss._node is None:
        raise NoTape("loss has no open tape (no tracked forward, or tape already consumed)")

    # reverse topological order over tensors that carry tape nodes
    tape = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        t, expanded = stack_.pop()
        if expanded:
            tape.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack_.append((t, True))
        for p in t._node.parents:
            if p._node is not None and id(p) not in visited:
                stack_.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if p._node is not None:
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
            elif p.requires_grad:
                pg = np.asarray(pg, dtype=np.float64).reshape(p.shape)
                p.grad = pg.copy() if p.grad is None else p.grad + pg

    for t in tape:
        t._node = None
