"""Dense tensors with a small tape-based reverse-mode autodiff engine.

Every differentiable op records its parents and a closure mapping the output
gradient to per-parent gradients. ``backward`` walks the recorded graph in
reverse topological order and accumulates into ``.grad`` of leaf tensors.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32

# Set SWINFUSE_DEBUG=1 to assert every op output is finite.
DEBUG = os.environ.get("SWINFUSE_DEBUG", "") not in ("", "0")

_grad_enabled = True

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating):
        arr = np.asarray(data)
    else:
        arr = np.asarray(data, dtype=DEFAULT_DTYPE)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-d array of reals that can take part in gradient recording.

    Floating numpy arrays keep their dtype; anything else is converted to
    ``DEFAULT_DTYPE`` (float32). Use float64 arrays for gradient checks.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def _const(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other) -> Tensor:
        other = self._const(other)
        a, b = self.shape, other.shape
        return _record(self.data + other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = self._const(other)
        a, b = self.shape, other.shape
        return _record(self.data - other.data, (self, other),
                       lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other) -> Tensor:
        return self._const(other) - self

    def __mul__(self, other) -> Tensor:
        other = self._const(other)
        x, y = self.data, other.data
        return _record(x * y, (self, other),
                       lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
                       "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = self._const(other)
        x, y = self.data, other.data
        return _record(x / y, (self, other),
                       lambda g: (_unbroadcast(g / y, x.shape),
                                  _unbroadcast(-g * x / (y * y), y.shape)),
                       "div")

    def __rtruediv__(self, other) -> Tensor:
        return self._const(other) / self

    def __neg__(self) -> Tensor:
        return _record(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        out = x ** exponent
        return _record(out, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return _record(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> Tensor:
        x = self.data
        return _record(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self) -> Tensor:
        out = np.sqrt(self.data)
        return _record(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def abs(self) -> Tensor:
        # sign(0) == 0 gives the zero subgradient at the kink
        s = np.sign(self.data)
        return _record(np.abs(self.data), (self,), lambda g: (g * s,), "abs")

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return _record(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _record(self.data.sum(axis=axis, keepdims=keepdims), (self,), grad_fn, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {old} into {shape}") from exc
        return _record(out, (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return _record(np.transpose(self.data, axes), (self,),
                       lambda g: (np.transpose(g, inverse),), "transpose")

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def swap_last(self) -> Tensor:
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    def roll(self, shifts, axes) -> Tensor:
        neg = tuple(-s for s in shifts) if isinstance(shifts, (tuple, list)) else -shifts
        return _record(np.roll(self.data, shifts, axes), (self,),
                       lambda g: (np.roll(g, neg, axes),), "roll")

    def take(self, index: np.ndarray) -> Tensor:
        """Gather rows along axis 0; ``index`` may have any shape."""
        index = np.asarray(index)
        shape = self.shape

        def grad_fn(g):
            acc = np.zeros(shape, dtype=g.dtype)
            np.add.at(acc, index, g)
            return (acc,)

        return _record(self.data[index], (self,), grad_fn, "take")

    def astype(self, dtype) -> Tensor:
        src = self.dtype
        return _record(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "astype")

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        backward(self)


def _record(out: np.ndarray, parents: tuple[Tensor, ...],
            grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
            op: str) -> Tensor:
    if DEBUG and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite output from {op}")
    t = Tensor(out)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._grad_fn = grad_fn
        t._op = op
    return t


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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every leaf that ``root`` depends on.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if root.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward() root was not produced by a recorded computation")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- free-function ops --------------------------------------------------------


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with batch broadcasting."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return _record(x @ y, (a, b), grad_fn, "matmul")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, evaluated with per-row max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), grad_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each vector along the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} "
                         f"do not match features {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def grad_fn(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gamma, beta), grad_fn, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF written through erf."""
    v = x.data
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    out = v * cdf

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return _record(out.astype(v.dtype, copy=False), (x,), grad_fn, "gelu")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    out = matmul(x, weight.T)
    return out + bias if bias is not None else out


def filter2d(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Valid-mode 2-D correlation of the last two axes with a constant kernel."""
    k = np.asarray(kernel, dtype=x.dtype)
    kh, kw = k.shape
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ShapeError(f"filter2d kernel {k.shape} larger than input {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(-2, -1))
    out = np.einsum("...ijkl,kl->...ij", win, k)

    def grad_fn(g):
        pad = [(0, 0)] * (g.ndim - 2) + [(kh - 1, kh - 1), (kw - 1, kw - 1)]
        gp = np.pad(g, pad)
        gw = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(-2, -1))
        return (np.einsum("...ijkl,kl->...ij", gw, k[::-1, ::-1]),)

    return _record(out, (x,), grad_fn, "filter2d")


def zero_grad(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None
