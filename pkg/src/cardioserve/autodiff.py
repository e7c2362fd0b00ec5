"""Dense float64 tensors with reverse-mode differentiation.

A Tensor wraps a numpy array and, when produced by an op, remembers its
parents and how to push gradients back to them.  Parameters are trainable
leaves whose gradients persist and accumulate across backward passes;
gradients of interior nodes live only for the duration of one pass.
"""

import contextvars
import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit as _expit

_GRAD_ENABLED = contextvars.ContextVar("cardioserve_grad_enabled", default=True)


@contextmanager
def no_grad():
    """Skip graph recording inside the block: ops return plain value tensors.

    Inference under no_grad allocates no closures and retains no parent
    buffers; gradients cannot flow out of the block.
    """
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class GraphError(RuntimeError):
    """Misuse of the computation graph (bad root, backward before forward)."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_op")

    # Make numpy defer mixed ndarray/Tensor arithmetic to our operators.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None
        self._op: str | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = (_GRAD_ENABLED.get()
                           and any(p.requires_grad for p in parents))
        t._parents = parents if t.requires_grad else ()
        t._backprop = None
        t._op = op
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        kind = type(self).__name__
        return f"{kind}(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)


class Parameter(Tensor):
    """Trainable leaf: value plus a persistent same-shape gradient buffer."""

    __slots__ = ("grad_fresh",)

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.grad_fresh = False

    def zero_grad(self):
        self.grad.fill(0.0)
        self.grad_fresh = False


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Tensor):
    """Reverse-mode accumulation from a scalar root.

    Parameter (and requires-grad leaf) gradients accumulate across calls;
    interior gradients are scratch state local to one pass.
    """
    if root._op is None:
        raise GraphError("backward before forward: root was not produced by an op")
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    pass_grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    def accumulate(node: Tensor, g: np.ndarray):
        key = id(node)
        if key in pass_grads:
            pass_grads[key] = pass_grads[key] + g
        else:
            pass_grads[key] = g

    for node in reversed(order):
        g = pass_grads.pop(id(node), None)
        if g is None:
            continue
        if node._backprop is not None:
            node._backprop(g, accumulate)
        elif node.requires_grad and not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if isinstance(node, Parameter):
                node.grad_fresh = True


# -- primitive ops ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._from_op(a.data + b.data, (a, b), "add")

    if out.requires_grad:
        def bp(g, acc):
            if a.requires_grad:
                acc(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                acc(b, _unbroadcast(g, b.data.shape))

        out._backprop = bp
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._from_op(a.data * b.data, (a, b), "mul")

    if out.requires_grad:
        def bp(g, acc):
            if a.requires_grad:
                acc(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                acc(b, _unbroadcast(g * a.data, b.data.shape))

        out._backprop = bp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul expects (M,N) @ (N,) or (N,K), got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")

    if out.requires_grad:
        def bp(g, acc):
            if a.requires_grad:
                acc(a, np.outer(g, b.data) if b.data.ndim == 1 else g @ b.data.T)
            if b.requires_grad:
                acc(b, a.data.T @ g)

        out._backprop = bp
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor._from_op(np.maximum(x.data, 0.0), (x,), "relu")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, g * (x.data > 0.0))

        out._backprop = bp
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _expit(x.data)
    out = Tensor._from_op(y, (x,), "sigmoid")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, g * y * (1.0 - y))

        out._backprop = bp
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor._from_op(y, (x,), "tanh")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, g * (1.0 - y * y))

        out._backprop = bp
    return out


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}, expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise ValueError("log requires strictly positive values")
    out = Tensor._from_op(np.log(x.data), (x,), "log")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, g / x.data)

        out._backprop = bp
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only through the interior."""
    out = Tensor._from_op(np.clip(x.data, lo, hi), (x,), "clip")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, g * ((x.data > lo) & (x.data < hi)))

        out._backprop = bp
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._from_op(np.asarray(x.data.sum()), (x,), "sum")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, np.full(x.data.shape, float(g)))

        out._backprop = bp
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor._from_op(np.asarray(x.data.mean()), (x,), "mean")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, np.full(x.data.shape, float(g) / n))

        out._backprop = bp
    return out


def mean_last_axis(x: Tensor) -> Tensor:
    """Global average pool over the trailing (time) axis."""
    n = x.data.shape[-1]
    out = Tensor._from_op(x.data.mean(axis=-1), (x,), "mean_last_axis")

    if out.requires_grad:
        def bp(g, acc):
            acc(x, np.repeat(g[..., None], n, axis=-1) / n)

        out._backprop = bp
    return out


def row(x: Tensor, index: int) -> Tensor:
    """Extract row `index` along the leading axis."""
    out = Tensor._from_op(x.data[index], (x,), "row")

    if out.requires_grad:
        def bp(g, acc):
            full = np.zeros_like(x.data)
            full[index] = g
            acc(x, full)

        out._backprop = bp
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a 1-D input."""
    if x.data.ndim != 1 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(
            f"dense expects x:(N,), weight:(M,N), bias:(M,), got {x.shape}, {weight.shape}, {bias.shape}"
        )
    m, n = weight.data.shape
    if x.data.shape[0] != n or bias.data.shape[0] != m:
        raise ShapeError(
            f"dense shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    out = Tensor._from_op(weight.data @ x.data + bias.data, (x, weight, bias), "dense")

    if out.requires_grad:
        def bp(g, acc):
            if x.requires_grad:
                acc(x, weight.data.T @ g)
            if weight.requires_grad:
                acc(weight, np.outer(g, x.data))
            if bias.requires_grad:
                acc(bias, g)

        out._backprop = bp
    return out


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """1-D cross-correlation with "same" zero padding and ceil-division stride.

    x is (C_in, L) for one segment or (S, C_in, L) for a stack of segments
    sharing the kernel.  Output length is ceil(L / stride).  The kernel must
    have odd width; padding is (K-1)/2 on both ends.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv1d input must be (C,L) or (S,C,L), got {x.shape}")
    if kernel.data.ndim != 3:
        raise ShapeError(f"conv1d kernel must be (C_out,C_in,K), got {kernel.shape}")
    s, c_in, length = xd.shape
    c_out, kc_in, k = kernel.data.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel expects {kc_in} input channels, input has {c_in}")
    if k % 2 == 0:
        raise ShapeError(f"kernel width must be odd, got {k}")
    if bias.data.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")

    pad = (k - 1) // 2
    l_out = -(-length // stride)
    xp = np.zeros((s, c_in, length + 2 * pad))
    xp[:, :, pad:pad + length] = xd

    if stride == 1:
        # per-tap matmul on views: BLAS takes the strided panels directly,
        # so no im2col copy is materialized
        result = np.empty((s, c_out, l_out))
        result[:] = bias.data[None, :, None]
        for tap in range(k):
            result += kernel.data[:, :, tap] @ xp[:, :, tap:tap + l_out]
        win = None
    else:
        # windows view (S, C_in, L_out, K); tensordot copies once internally
        win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
        result = np.tensordot(win, kernel.data, axes=((1, 3), (1, 2)))
        result += bias.data[None, None, :]
        result = result.transpose(0, 2, 1)

    out = Tensor._from_op(result[0] if squeeze else result, (x, kernel, bias), "conv1d")

    if out.requires_grad:
        def bp(g, acc):
            gd = g[None] if squeeze else g
            if kernel.requires_grad:
                if stride == 1:
                    dk = np.empty_like(kernel.data)
                    for tap in range(k):
                        dk[:, :, tap] = np.tensordot(gd, xp[:, :, tap:tap + l_out],
                                                     axes=((0, 2), (0, 2)))
                else:
                    dk = np.tensordot(gd, win, axes=((0, 2), (0, 2)))
                acc(kernel, dk)
            if bias.requires_grad:
                acc(bias, gd.sum(axis=(0, 2)))
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                if stride == 1:
                    for tap in range(k):
                        dxp[:, :, tap:tap + l_out] += kernel.data[:, :, tap].T @ gd
                else:
                    # dwin[s,i,l,k] = sum_o gd[s,o,l] * kernel[o,i,k]
                    dwin = np.einsum("sol,oik->silk", gd, kernel.data, optimize=True)
                    for offset in range(k):
                        stop = offset + stride * (l_out - 1) + 1
                        dxp[:, :, offset:stop:stride] += dwin[:, :, :, offset]
                dx = dxp[:, :, pad:pad + length]
                acc(x, dx[0] if squeeze else dx)

        out._backprop = bp
    return out


# -- recurrent cell ---------------------------------------------------------


class GruParams:
    """Gate weights for one GRU layer: update z, reset r, candidate h."""

    GATE_NAMES = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")

    def __init__(self, wz, uz, bz, wr, ur, br, wh, uh, bh):
        self.wz, self.uz, self.bz = wz, uz, bz
        self.wr, self.ur, self.br = wr, ur, br
        self.wh, self.uh, self.bh = wh, uh, bh

    def parameters(self) -> list[Parameter]:
        return [getattr(self, name) for name in self.GATE_NAMES]

    @property
    def hidden_size(self) -> int:
        return self.uz.data.shape[0]

    @property
    def input_size(self) -> int:
        return self.wz.data.shape[1]


def gru_step(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    z = sigmoid(dense(x, p.wz, p.bz) + matmul(p.uz, h))
    r = sigmoid(dense(x, p.wr, p.br) + matmul(p.ur, h))
    h_cand = tanh(dense(x, p.wh, p.bh) + matmul(p.uh, mul(r, h)))
    return (1.0 - z) * h + z * h_cand


def gru_layer(inputs: Sequence[Tensor], params: GruParams, h0: Tensor | None = None) -> Tensor:
    """Run the GRU recurrence over a sequence and return the final hidden state."""
    if len(inputs) == 0:
        raise ShapeError("gru_layer requires a non-empty input sequence")
    h = h0 if h0 is not None else Tensor(np.zeros(params.hidden_size))
    for x in inputs:
        if x.data.shape != (params.input_size,):
            raise ShapeError(f"gru input must be ({params.input_size},), got {x.shape}")
        h = gru_step(x, h, params)
    return h


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
