"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation on a tracked tensor records its inputs and a backward rule on
the output.  Node ids come from a monotone counter, so sorting the ancestors
of a loss by id (descending) is a valid reverse topological order; that is
the tape replayed by :func:`backward`.

Broadcasting is deliberately narrow: two operands must have equal shapes, or
the shape of one must equal the trailing dimensions of the other (a bias row
``[C]`` against ``[N, C]``, a scalar against anything).
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "NonFiniteError",
    "new_tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "matmul",
    "transpose",
    "unary",
    "binary",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "log",
    "negate",
    "add",
    "subtract",
    "multiply",
    "concat",
    "reshape",
    "sum",
    "mean",
    "clamp",
    "spatial_tile",
    "conv2d",
    "conv_transpose2d",
    "batch_norm",
    "finite_diff_check",
]

_ids = itertools.count(1)
_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording for the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        if any(d == 0 for d in arr.shape):
            raise ValueError(f"zero-extent dimension in shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = next(_ids) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    # construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out.node_id = next(_ids)
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.node_id = None
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        """Toggle tracking on a leaf tensor."""
        if self._backward is not None:
            raise ValueError("only leaf tensors can toggle requires_grad")
        self.requires_grad = bool(flag)
        if flag and self.node_id is None:
            self.node_id = next(_ids)
        return self

    def backward(self) -> dict:
        return backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def new_tensor(shape, elements, track_gradient: bool = False, dtype=np.float64) -> Tensor:
    """Build a tensor from a flat row-major element list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"zero-extent dimension in shape {shape}")
    flat = np.asarray(elements, dtype=dtype).reshape(-1)
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise ValueError(f"{flat.size} elements do not fill shape {shape} ({expected} needed)")
    return Tensor(flat.reshape(shape), requires_grad=track_gradient)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict:
    """Propagate d(loss)/d(node) to every tracked ancestor.

    Leaf tensors accumulate into ``.grad``.  The returned map holds the
    gradient of every tracked leaf keyed by node id; intermediate gradients
    are released as soon as they have been propagated.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.node_id is None:
        raise ValueError("loss is detached from the tape (no tracked inputs)")

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads = {loss.node_id: np.ones_like(loss.data)}
    leaves = {}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            leaves[nid] = g
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        parent_grads = t._backward(g)
        for p, pg in zip(t._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise AssertionError(f"{t.op}: gradient shape {pg.shape} != input shape {p.data.shape}")
            if p.node_id in grads:
                grads[p.node_id] = grads[p.node_id] + pg
            else:
                grads[p.node_id] = pg
    return leaves


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return Tensor._result(ad @ bd, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return Tensor._result(a.data.T, (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return Tensor._result(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive element")
    xd = x.data
    return Tensor._result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def negate(x: Tensor) -> Tensor:
    return Tensor._result(-x.data, (x,), lambda g: (-g,), "negate")


_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "log": log,
    "negate": negate,
}


def unary(kind: str, x: Tensor, alpha: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    try:
        fn = _UNARY[kind]
    except KeyError:
        raise ValueError(f"unknown unary op {kind!r}") from None
    return fn(x)


def _trailing_match(small: tuple, big: tuple) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _binary(a, b, fwd, grad_a, grad_b, op):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape != b.shape and not (
        _trailing_match(b.shape, a.shape) or _trailing_match(a.shape, b.shape)
    ):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")
    ad, bd = a.data, b.data
    out = fwd(ad, bd)

    def bw(g):
        ga = _reduce_to(grad_a(g, ad, bd), ad.shape) if a.requires_grad else None
        gb = _reduce_to(grad_b(g, ad, bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), bw, op)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def subtract(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "subtract")


def multiply(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "multiply")


_BINARY = {"add": add, "subtract": subtract, "multiply": multiply}


def binary(kind: str, a, b) -> Tensor:
    try:
        fn = _BINARY[kind]
    except KeyError:
        raise ValueError(f"unknown binary op {kind!r}") from None
    return fn(a, b)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the input was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    if np.shares_memory(out, x.data):
        out = out.copy()

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.asarray(out), (x,), bw, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != axis
        ):
            raise ValueError(f"concat: extents {t.shape} and {ref} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return Tensor._result(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return multiply(sum(x, axis), np.asarray(1.0 / count, dtype=x.dtype))


def spatial_tile(x: Tensor, height: int, width: int) -> Tensor:
    """Replicate an ``[N, C]`` tensor to ``[N, C, height, width]``."""
    if x.ndim != 2:
        raise ValueError("spatial_tile expects [N, C]")
    n, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, None], (n, c, height, width)).copy()
    return Tensor._result(out, (x,), lambda g: (g.sum(axis=(2, 3)),), "spatial_tile")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Strided view [N, C, Ho, Wo, kh, kw] over a zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Patch matrix [N*Ho*Wo, C*kh*kw] with rows in (n, i, j) order."""
    win = _windows(x, kh, kw, stride, padding)  # N C Ho Wo kh kw
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _scatter(cols: np.ndarray, out_hw: tuple, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: cols [C, kh, kw, N, Ho, Wo] -> [N, C, H, W].

    Accumulates into one dense buffer per stride phase so every add touches
    contiguous rows, then interleaves the phases once.
    """
    c, kh, kw, n, ho, wo = cols.shape
    s = stride
    hp, wp = out_hw[0] + 2 * padding, out_hw[1] + 2 * padding
    hq, wq = -(-hp // s), -(-wp // s)
    buf = np.zeros((s, s, c, n, hq, wq), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[i % s, j % s, :, :, i // s:i // s + ho, j // s:j // s + wo] += cols[:, i, j]
    full = buf.transpose(3, 2, 4, 0, 5, 1).reshape(n, c, hq * s, wq * s)
    return np.ascontiguousarray(full[:, :, padding:padding + out_hw[0], padding:padding + out_hw[1]])


def _conv_out(extent: int, k: int, stride: int, padding: int) -> int:
    span = extent + 2 * padding - k
    if span < 0:
        raise ValueError(f"kernel {k} exceeds padded extent {extent + 2 * padding}")
    if span % stride:
        raise ValueError(
            f"output extent ({extent}+2*{padding}-{k})/{stride}+1 is not an integer"
        )
    return span // stride + 1


def _bias_term(out: np.ndarray, bias: Optional[Tensor], channels: int) -> np.ndarray:
    if bias is None:
        return out
    if bias.shape != (channels,):
        raise ValueError(f"bias shape {bias.shape} does not match {channels} channels")
    return out + bias.data[None, :, None, None]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """Cross-correlation of ``[N, C, H, W]`` with ``[O, C, kh, kw]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {kc}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    patches = _im2col(x.data, kh, kw, stride, padding)
    kd = kernel.data
    out = (patches @ kd.reshape(o, -1).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = _bias_term(np.ascontiguousarray(out), bias, o)

    def bw(g):
        gx = gk = gb = None
        if x.requires_grad:
            cols = np.tensordot(kd, g, axes=([0], [1]))  # C kh kw N Ho Wo
            gx = _scatter(cols, (h, w), stride, padding)
        if kernel.requires_grad:
            gk = (g.transpose(1, 0, 2, 3).reshape(o, -1) @ patches).reshape(kd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._result(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
                     bias: Optional[Tensor] = None) -> Tensor:
    """Transposed convolution of ``[N, C, H, W]`` with ``[C, O, kh, kw]``.

    The forward pass is exactly the input-gradient of :func:`conv2d` with the
    same kernel, so the two are adjoint linear maps.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv_transpose2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    kc, o, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv_transpose2d: input has {c} channels, kernel expects {kc}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv_transpose2d: invalid output extent {ho}x{wo}")
    kd = kernel.data
    cols = np.tensordot(kd, x.data, axes=([0], [1]))  # O kh kw N H W
    out = _bias_term(_scatter(cols, (ho, wo), stride, padding), bias, o)

    def bw(g):
        gx = gk = gb = None
        patches = _im2col(g, kh, kw, stride, padding)  # [N*H*W, O*kh*kw]
        if x.requires_grad:
            gx = np.ascontiguousarray(
                (patches @ kd.reshape(c, -1).T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            )
        if kernel.requires_grad:
            gk = (x.data.transpose(1, 0, 2, 3).reshape(c, -1) @ patches).reshape(kd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._result(out, parents, bw, "conv_transpose2d")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
               running_mean: Optional[np.ndarray] = None,
               running_var: Optional[np.ndarray] = None,
               momentum: float = 0.1, epsilon: float = 1e-5,
               update_stats: bool = True) -> Tensor:
    """Per-channel batch normalization over every axis except axis 1.

    In train mode the batch statistics are used and, when running buffers are
    given and ``update_stats`` is set, blended into them in place (unbiased
    variance).  Eval mode normalizes with the running buffers.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if x.ndim < 2:
        raise ValueError("batch_norm expects [N, C, ...]")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data

    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs at least 2 samples")
        count = xd.size // c
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if update_stats and running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / max(count - 1, 1)
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("eval mode needs running statistics")
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = gd * xhat + beta.data.reshape(bshape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if mode == "train":
                m = xd.size // c
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, gg, gbeta

    return Tensor._result(out, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(function: Callable[[Tensor], Tensor], point, epsilon: float = 1e-6) -> float:
    """Max-norm relative error between backward and central-difference gradients.

    Returns ``max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    backward(function(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    probe = base.copy()
    with no_grad():
        for idx in np.ndindex(base.shape):
            orig = probe[idx]
            probe[idx] = orig + epsilon
            fp = function(Tensor(probe.copy())).item()
            probe[idx] = orig - epsilon
            fm = function(Tensor(probe.copy())).item()
            probe[idx] = orig
            numeric[idx] = (fp - fm) / (2 * epsilon)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    return float(np.abs(analytic - numeric).max() / scale)
