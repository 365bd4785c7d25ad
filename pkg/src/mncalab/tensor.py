"""Reverse-mode automatic differentiation over numpy arrays.

Small tape engine sized for per-pixel cellular automaton networks: every op
builds the output tensor eagerly and records a closure that scatters the
output adjoint back to its parents. Working precision is float32; every
reduction (dense accumulation, softmax normalizer, losses) runs its sum in
float64 and rounds once, so results do not depend on BLAS blocking order.
Passing float64 leaves through the same graph turns the whole engine into a
64-bit checker, which is how the finite-difference tests run.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "ParamSet",
    "NumericalDivergenceError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "exp",
    "log",
    "concat_channels",
    "slice_channels",
    "dense_per_pixel",
    "sobel_perceive",
    "softmax",
    "sum_axis",
    "mean_all",
    "sum_all",
    "mse",
    "stop_gradient",
    "straight_through",
    "backward",
    "SOBEL_X",
    "SOBEL_Y",
]


class NumericalDivergenceError(RuntimeError):
    """A state or loss stopped being finite."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.dtype), self)

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))

    def backward(self):
        backward(self)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend tape building; ops inside produce detached tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data: np.ndarray, parents: tuple, bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = bwd
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        # own the buffer: closures may hand the same array to several parents
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to the broadcast-source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ops -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return _make(data, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(data, (a,), bwd)


# -- shape ops -------------------------------------------------------------


def concat_channels(parts: list[Tensor], axis: int = -3) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis % g.ndim] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _make(data, tuple(parts), bwd)


def slice_channels(a: Tensor, start: int, stop: int, axis: int = -3) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis % a.data.ndim] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, (a,), bwd)


# -- per-pixel dense layer -------------------------------------------------


def dense_per_pixel(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Apply the same dense layer at every pixel.

    x: [..., Cin, H, W]; w: [Cout, Cin]; b: [Cout] -> [..., Cout, H, W].
    The contraction accumulates in float64 and rounds once to the working
    dtype, which pins a summation-order-independent result.
    """
    if w.data.ndim != 2:
        raise ValueError(f"weight must be 2-D [out, in], got shape {w.data.shape}")
    if x.data.ndim < 3:
        raise ValueError(f"input must be [..., C, H, W], got shape {x.data.shape}")
    cout, cin = w.data.shape
    if x.data.shape[-3] != cin:
        raise ValueError(f"input has {x.data.shape[-3]} channels, weight expects {cin}")
    if b.data.shape != (cout,):
        raise ValueError(f"bias shape {b.data.shape} does not match {cout} outputs")

    lead = x.data.shape[:-3]
    h, wid = x.data.shape[-2:]
    dtype = np.result_type(x.data.dtype, w.data.dtype)

    xm = x.data.reshape(lead + (cin, h * wid))
    acc = np.matmul(w.data.astype(np.float64, copy=False), xm.astype(np.float64, copy=False))
    acc += b.data.astype(np.float64, copy=False)[:, None]
    data = acc.astype(dtype, copy=False).reshape(lead + (cout, h, wid))

    def bwd(g):
        gm = g.reshape(lead + (cout, h * wid))
        xw = xm.astype(dtype, copy=False)
        gw = gm.astype(dtype, copy=False)
        if w.requires_grad:
            dw = np.matmul(gw, xw.swapaxes(-1, -2))
            if dw.ndim > 2:
                dw = dw.sum(axis=tuple(range(dw.ndim - 2)))
            _accum(w, dw)
        if b.requires_grad:
            _accum(b, gw.sum(axis=tuple(i for i in range(gw.ndim) if i != gw.ndim - 2)))
        if x.requires_grad:
            dx = np.matmul(w.data.T.astype(dtype, copy=False), gw)
            _accum(x, dx.reshape(x.data.shape))

    return _make(data, (x, w, b), bwd)


# -- fixed 3x3 perception --------------------------------------------------

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def _corr3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 correlation with zero padding on the last two axes."""
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(x, pad)
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            k = kernel[dy, dx]
            if k == 0.0:
                continue
            out += k * p[..., dy : dy + h, dx : dx + w]
    return out


def sobel_perceive(x: Tensor) -> Tensor:
    """Concatenate [state, grad_x(state), grad_y(state)] along channels.

    Unnormalized Sobel stencils, zero padding; [..., C, H, W] -> [..., 3C, H, W].
    """
    if x.data.ndim < 3:
        raise ValueError(f"input must be [..., C, H, W], got shape {x.data.shape}")
    xd = x.data
    data = np.concatenate([xd, _corr3(xd, SOBEL_X), _corr3(xd, SOBEL_Y)], axis=-3)

    def bwd(g):
        c = xd.shape[-3]
        gi = g[..., :c, :, :]
        ggx = g[..., c : 2 * c, :, :]
        ggy = g[..., 2 * c :, :, :]
        # adjoint of zero-padded correlation is correlation with the flipped kernel
        dx = gi + _corr3(ggx, SOBEL_X[::-1, ::-1]) + _corr3(ggy, SOBEL_Y[::-1, ::-1])
        _accum(x, dx)

    return _make(data, (x,), bwd)


# -- normalizations and reductions ----------------------------------------


def softmax(x: Tensor, axis: int) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64, copy=False))
    data = (e / e.sum(axis=axis, keepdims=True)).astype(xd.dtype, copy=False)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(x, data * (g - inner))

    return _make(data, (x,), bwd)


def sum_axis(x: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(data, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(dtype=np.float64)).astype(x.data.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(data, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.sum(dtype=np.float64) / n).astype(x.data.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape))

    return _make(data, (x,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over every element, float64 accumulator."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shapes differ: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    n = d.size
    data = np.asarray(np.sum(d.astype(np.float64) ** 2) / n).astype(a.data.dtype)

    def bwd(g):
        scaled = (2.0 * g / n) * d
        _accum(a, scaled)
        _accum(b, -scaled)

    return _make(data, (a, b), bwd)


# -- gradient flow control -------------------------------------------------


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


def straight_through(soft: Tensor, hard_values: np.ndarray) -> Tensor:
    """Forward the hard values, route the adjoint to the soft tensor."""
    data = np.asarray(hard_values, dtype=soft.data.dtype)
    if data.shape != soft.data.shape:
        raise ValueError("hard values must match the soft tensor's shape")

    def bwd(g):
        _accum(soft, g)

    return _make(data, (soft,), bwd)


# -- reverse sweep ---------------------------------------------------------


def backward(loss: Tensor):
    """Populate .grad on every reachable requires_grad leaf from a scalar."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward starts from a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:
            node.grad = None  # free interior adjoints as soon as they are spent


# -- parameter bundles -----------------------------------------------------


class ParamSet:
    """Ordered named parameters plus per-parameter Adam moment slots."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = dict(params)
        for t in self.params.values():
            t.requires_grad = True
        # moments kept in float64 so optimizer math is exact at any working dtype
        self.m = {k: np.zeros(t.data.shape, dtype=np.float64) for k, t in self.params.items()}
        self.v = {k: np.zeros(t.data.shape, dtype=np.float64) for k, t in self.params.items()}
        self.step_count = 0

    def names(self) -> list[str]:
        return list(self.params.keys())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for k, t in self.params.items():
            out[k] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out
