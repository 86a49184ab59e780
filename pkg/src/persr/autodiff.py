"""Dense tensors with reverse-mode automatic differentiation.

Everything is a plain numpy array wrapped in :class:`Tensor`. Ops build a
tape by storing parent links and a backward closure on their outputs;
``backward(loss)`` walks that tape once in reverse topological order and
accumulates gradients into the leaves. A tape is consumed by its backward
pass: touching it again raises :class:`TapeError`.

Two precisions are supported. Training code runs float32; gradient-check
tests build everything at float64. An op's output dtype follows numpy
promotion of its inputs.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "ShapeError", "TapeError", "as_tensor", "backward", "no_grad",
    "add", "sub", "mul", "neg", "scale", "clip_floor",
    "relu", "leaky_relu", "sigmoid", "softplus", "log", "softmax",
    "reshape", "pixel_shuffle", "pixel_unshuffle",
    "tsum", "tmean", "mean_abs", "cumsum_last", "global_avg_pool",
    "dense", "conv2d", "resample_axis",
]

_FLOATS = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operands do not fit the op's shape contract."""


class TapeError(RuntimeError):
    """Backward called on a dead, spent, or non-scalar head."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._spent = False

    @property
    def shape(self):
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def detach(self) -> "Tensor":
        """Same values, fresh leaf, no tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._spent = False
        return out

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # operator sugar; scalars go through scale/shift, tensors stay strict
    def __add__(self, other):
        return add(self, as_tensor(other, like=self))

    def __sub__(self, other):
        return sub(self, as_tensor(other, like=self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not provided")

    def __neg__(self):
        return neg(self)


def as_tensor(value, dtype=None, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if dtype is None and like is not None:
        dtype = like.dtype
    return Tensor(value, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise ArithmeticError(f"{op}: non-finite values in result")


def _result(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._spent = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def bwd(g):
        return ((a, g), (b, g))

    return _result(a.data + b.data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")

    def bwd(g):
        return ((a, g), (b, -g))

    return _result(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def bwd(g):
        return ((a, g * b.data), (b, g * a.data))

    return _result(a.data * b.data, (a, b), bwd, "mul")


def neg(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g):
        return ((x, -g),)

    return _result(-x.data, (x,), bwd, "neg")


def scale(x, c: float) -> Tensor:
    """x * c for a python scalar c."""
    x = as_tensor(x)
    c = float(c)

    def bwd(g):
        return ((x, g * c),)

    return _result(x.data * c, (x,), bwd, "scale")


def clip_floor(x, floor: float) -> Tensor:
    """max(x, floor); gradient passes where x > floor, is 0 elsewhere."""
    x = as_tensor(x)
    floor = float(floor)
    mask = x.data > floor

    def bwd(g):
        return ((x, g * mask),)

    return _result(np.maximum(x.data, floor), (x,), bwd, "clip_floor")


# ---------------------------------------------------------------- activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        return ((x, g * mask),)

    return _result(np.maximum(x.data, 0), (x,), bwd, "relu")


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    """max(x, alpha*x); the subgradient at exactly 0 is alpha."""
    x = as_tensor(x)
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"leaky_relu: alpha must be in (0, 1], got {alpha}")
    factor = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(alpha))

    def bwd(g):
        return ((x, g * factor),)

    return _result(np.where(x.data > 0, x.data, alpha * x.data), (x,), bwd, "leaky_relu")


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    """Logistic function, clamped into the open interval (0, 1).

    Without the clamp a saturated float32 sigmoid rounds to exactly 0.0 or
    1.0; outputs here are probabilities and must stay strictly inside.
    """
    x = as_tensor(x)
    fi = np.finfo(x.dtype)
    y = np.clip(_sigmoid_arr(x.data), fi.tiny, 1.0 - fi.epsneg)

    def bwd(g):
        return ((x, g * y * (1.0 - y)),)

    return _result(y, (x,), bwd, "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated stably; gradient is sigmoid(x)."""
    x = as_tensor(x)

    def bwd(g):
        return ((x, g * _sigmoid_arr(x.data)),)

    return _result(np.logaddexp(0.0, x.data).astype(x.dtype, copy=False), (x,), bwd, "softplus")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ArithmeticError("log: domain requires strictly positive input")

    def bwd(g):
        return ((x, g / x.data),)

    return _result(np.log(x.data), (x,), bwd, "log")


def softmax(x) -> Tensor:
    """Row-wise softmax over the last axis, with max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((x, y * (g - dot)),)

    return _result(y, (x,), bwd, "softmax")


# ---------------------------------------------------------------- shape moves

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from err
    old = x.shape

    def bwd(g):
        return ((x, g.reshape(old)),)

    return _result(data, (x,), bwd, "reshape")


def _shuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    out = data.reshape(n, c // (r * r), r, r, h, w)
    out = out.transpose(0, 1, 4, 2, 5, 3)
    return out.reshape(n, c // (r * r), h * r, w * r)


def _unshuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    out = data.reshape(n, c, h // r, r, w // r, r)
    out = out.transpose(0, 1, 3, 5, 2, 4)
    return out.reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r: int = 2) -> Tensor:
    """Depth to space: (N, C*r^2, H, W) -> (N, C, H*r, W*r).

    Channel block [a, b, c, d] with r=2 lands as [[a, b], [c, d]].
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle: expected 4-D input, got {x.shape}")
    if x.shape[1] % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: channels {x.shape[1]} not divisible by {r * r}")

    def bwd(g):
        return ((x, _unshuffle(g, r)),)

    return _result(_shuffle(x.data, r), (x,), bwd, "pixel_shuffle")


def pixel_unshuffle(x, r: int = 2) -> Tensor:
    """Space to depth, the exact inverse of :func:`pixel_shuffle`."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pixel_unshuffle: expected 4-D input, got {x.shape}")
    if x.shape[2] % r != 0 or x.shape[3] % r != 0:
        raise ShapeError(f"pixel_unshuffle: spatial dims {x.shape[2:]} not divisible by {r}")

    def bwd(g):
        return ((x, _shuffle(g, r)),)

    return _result(_unshuffle(x.data, r), (x,), bwd, "pixel_unshuffle")


# ---------------------------------------------------------------- reductions

def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bwd(g):
        if axis is None:
            return ((x, np.broadcast_to(g, shape)),)
        return ((x, np.broadcast_to(np.expand_dims(g, axis), shape)),)

    return _result(x.data.sum(axis=axis), (x,), bwd, "tsum")


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    count = x.size if axis is None else shape[axis]

    def bwd(g):
        if axis is None:
            return ((x, np.broadcast_to(g / count, shape)),)
        return ((x, np.broadcast_to(np.expand_dims(g / count, axis), shape)),)

    return _result(x.data.mean(axis=axis), (x,), bwd, "tmean")


def mean_abs(x) -> Tensor:
    """Mean of |x| over every element; subgradient of |.| at 0 is 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    n = x.size

    def bwd(g):
        return ((x, g * sign / n),)

    return _result(np.abs(x.data).mean(), (x,), bwd, "mean_abs")


def cumsum_last(x) -> Tensor:
    """Cumulative sum along the last axis."""
    x = as_tensor(x)

    def bwd(g):
        return ((x, np.flip(np.cumsum(np.flip(g, -1), -1), -1)),)

    return _result(np.cumsum(x.data, axis=-1), (x,), bwd, "cumsum_last")


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape

    def bwd(g):
        return ((x, np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w))),)

    return _result(x.data.mean(axis=(2, 3)), (x,), bwd, "global_avg_pool")


# ---------------------------------------------------------------- linear maps

def dense(x, weight, bias) -> Tensor:
    """x @ weight + bias for x (N, F), weight (F, G), bias (G,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense: need 2-D operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: inner dims differ, {x.shape} @ {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")

    def bwd(g):
        return (
            (x, g @ weight.data.T),
            (weight, x.data.T @ g),
            (bias, g.sum(axis=0)),
        )

    return _result(x.data @ weight.data + bias.data, (x, weight, bias), bwd, "dense")


def conv2d(x, weight, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with zero padding.

    weight is (Cout, Cin, k, k) with odd k; stride is 1 or 2. Forward runs as
    im2col + one matmul; the input gradient is rebuilt from the column
    gradients with k*k strided slice-adds, so no scatter loop over pixels.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW input, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: expected square kernels, got {weight.shape}")
    k = weight.shape[2]
    if k % 2 != 1:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: {x.shape[1]} input channels vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({weight.shape[0]},)")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be >= 0, got {pad}")

    n, cin, h, w = x.shape
    cout = weight.shape[0]
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: input {h}x{w} with pad {pad} smaller than kernel {k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        grads = []
        if weight.requires_grad:
            grads.append((weight, (gmat.T @ cols).reshape(weight.shape)))
        if bias.requires_grad:
            grads.append((bias, gmat.sum(axis=0)))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, cin, k, k).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            grads.append((x, dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp))
        return grads

    return _result(out, (x, weight, bias), bwd, "conv2d")


def resample_axis(x, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed (out, in) resampling matrix along one axis of x.

    The matrix is a constant (no gradient); gradients flow through x via the
    transposed matrix. This is how fixed bicubic filters join the tape.
    """
    x = as_tensor(x)
    matrix = np.asarray(matrix, dtype=x.dtype)
    if matrix.ndim != 2:
        raise ShapeError(f"resample_axis: matrix must be 2-D, got {matrix.shape}")
    axis = axis % x.ndim
    if x.shape[axis] != matrix.shape[1]:
        raise ShapeError(
            f"resample_axis: axis {axis} has {x.shape[axis]} elements, matrix wants {matrix.shape[1]}")

    def apply(mat, arr):
        moved = np.moveaxis(arr, axis, 0)
        out = np.tensordot(mat, moved, axes=([1], [0]))
        return np.ascontiguousarray(np.moveaxis(out, 0, axis))

    def bwd(g):
        return ((x, apply(matrix.T, g)),)

    return _result(apply(matrix, x.data), (x,), bwd, "resample_axis")


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Visits the tape once in reverse topological order, accumulates into leaf
    ``.grad`` fields, then drops every visited closure. A second backward
    through any part of the same tape raises :class:`TapeError`.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward: loss must be a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._spent:
        raise TapeError("backward: tape already consumed")
    if not loss.requires_grad:
        raise TapeError("backward: loss has no live tape")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._spent:
            raise TapeError("backward: graph reaches an already-consumed tape")
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.dtype)
            else:
                node.grad += g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else held + pg
        node._backward = None
        node._parents = ()
        node._spent = True
