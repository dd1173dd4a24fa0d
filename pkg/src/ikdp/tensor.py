"""Small dense-array core with tape-based reverse-mode autodiff.

Arrays are numpy-backed, rank <= 3, stored in the active precision
(float32 by default). Every differentiable op executed while recording is
appended to a per-thread tape; :func:`backward` replays the tape in exact
reverse order and then clears it.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> grads = backward((x * x).sum())
    >>> float(x.grad[0])
    6.0
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_RANK = 3
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class BackwardError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class _State(threading.local):
    def __init__(self) -> None:
        self.tape: list[_Node] = []
        self.recording = True
        self.dtype = np.dtype(np.float32)


_state = _State()


def default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def precision(dtype) -> Iterable[None]:
    """Temporarily switch storage precision (float64 is used for gradient checks)."""
    prev = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterable[None]:
    prev = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


def clear_tape() -> None:
    _state.tape.clear()


class _Node:
    __slots__ = ("out", "inputs", "grad_fn", "name")

    def __init__(self, out: "Tensor", inputs: tuple["Tensor", ...], grad_fn: Callable, name: str):
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn
        self.name = name


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_state.dtype)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK} (shape {arr.shape})")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable, name: str) -> Tensor:
    needs = _state.recording and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _state.tape.append(_Node(out, tuple(inputs), grad_fn, name))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    th = np.tanh(_SQRT_2_OVER_PI * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def grad_fn(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner
        return (g * d,)

    return _record(out, (a,), grad_fn, "gelu")


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def cos(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "scale": scale,
    "relu": relu, "gelu": gelu, "sin": sin, "cos": cos,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D operands, batched for (B,m,k)@(B,k,n) and (B,m,k)@(k,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 3 and (a.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim == 3:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(ad @ bd, (a, b), grad_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(src),), "reshape")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    axis = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.ndim) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _record(np.concatenate([p.data for p in parts], axis=axis), parts, grad_fn, "concat")


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""
    src = a.shape

    def grad_fn(g):
        full = np.zeros(src, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _record(a.data[..., start:stop], (a,), grad_fn, "slice")


def split_heads(a: Tensor, num_heads: int) -> Tensor:
    """(B, L, H*D) -> (B*H, L, D)."""
    bsz, length, width = a.shape
    if width % num_heads:
        raise ShapeError(f"split_heads: width {width} not divisible by {num_heads} heads")
    dh = width // num_heads

    def fwd(x):
        return x.reshape(bsz, length, num_heads, dh).transpose(0, 2, 1, 3).reshape(bsz * num_heads, length, dh)

    def grad_fn(g):
        return (g.reshape(bsz, num_heads, length, dh).transpose(0, 2, 1, 3).reshape(bsz, length, width),)

    return _record(fwd(a.data), (a,), grad_fn, "split_heads")


def merge_heads(a: Tensor, num_heads: int) -> Tensor:
    """(B*H, L, D) -> (B, L, H*D); inverse of :func:`split_heads`."""
    bh, length, dh = a.shape
    bsz = bh // num_heads

    def fwd(x):
        return x.reshape(bsz, num_heads, length, dh).transpose(0, 2, 1, 3).reshape(bsz, length, num_heads * dh)

    def grad_fn(g):
        return (g.reshape(bsz, length, num_heads, dh).transpose(0, 2, 1, 3).reshape(bh, length, dh),)

    return _record(fwd(a.data), (a,), grad_fn, "merge_heads")


# ---------------------------------------------------------------- reductions & normalisation

def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, dtype=np.float64).astype(a.data.dtype)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(g.dtype),)

    return _record(out, (a,), grad_fn, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(x.dtype)

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True, dtype=np.float64).astype(y.dtype)
        return (y * (g - dot),)

    return _record(y, (a,), grad_fn, "softmax")


LN_EPS = 1e-5


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalise over the last axis, then apply ``gain * x + bias``."""
    n = a.shape[-1]
    if n < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: gain/bias shapes {gain.shape}, {bias.shape} for width {n}")
    x = a.data
    dt = x.dtype
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + LN_EPS)).astype(dt)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def grad_fn(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
        dx = inv * (dxhat - m1 - xhat * m2)
        flat_g = g.reshape(-1, n)
        dgain = (flat_g * xhat.reshape(-1, n)).sum(axis=0, dtype=np.float64).astype(dt)
        dbias = flat_g.sum(axis=0, dtype=np.float64).astype(dt)
        return dx, dgain, dbias

    return _record(out, (a, gain, bias), grad_fn, "layer_norm")


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    out = np.asarray((diff * diff).mean(), dtype=a.data.dtype)
    n = diff.size

    def grad_fn(g):
        d = (2.0 / n) * diff * g
        return d.astype(a.data.dtype), (-d).astype(b.data.dtype)

    return _record(out, (a, b), grad_fn, "mse")


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-accumulate d(loss)/d(input) over the recorded tape, then clear it.

    Gradients are accumulated into ``.grad`` of every tensor with
    ``requires_grad``; the return value maps ``id(tensor)`` to its gradient
    for leaf inspection.
    """
    if loss.data.size != 1:
        clear_tape()
        raise BackwardError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    try:
        for node in reversed(tape):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.grad_fn(g)):
                if not inp.requires_grad or gi is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = inp
    finally:
        clear_tape()
    out: dict[int, np.ndarray] = {}
    for key, g in grads.items():
        t = leaves.get(key)
        if t is None:
            if key == id(loss):
                t = loss
            else:
                continue
        g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        t.grad = g if t.grad is None else t.grad + g
        out[key] = t.grad
    return out


# ---------------------------------------------------------------- optimiser

class Adam:
    """Adam with bias correction over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(name)
        self.step_count += 1
        adam_step(self.params, self.m, self.v, self.step_count, self.lr, self.beta1, self.beta2, self.eps,
                  checked=True)


def adam_step(params: dict[str, Tensor], m: dict[str, np.ndarray], v: dict[str, np.ndarray], step: int,
              lr: float, beta1: float, beta2: float, eps: float, checked: bool = False) -> None:
    """One in-place Adam update; raises before touching anything if a gradient is non-finite."""
    if not checked:
        for name, p in params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(name)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if m[name].shape != p.shape:
            raise ShapeError(f"optimizer state for {name!r} has shape {m[name].shape}, param {p.shape}")
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * (g * g)
        update = lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
