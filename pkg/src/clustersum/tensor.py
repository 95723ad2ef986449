"""Dense float tensors with reverse-mode automatic differentiation.

Every model in this package runs on this module: a numpy-backed ``Tensor``
plus a small set of differentiable operations. Each operation records itself
on a graph; ``Tensor.backward`` replays the graph in reverse topological
order and accumulates gradients on every participating node.

Storage is float32 by default. float64 is supported end to end so gradient
checks can run a high-precision shadow. Regardless of storage dtype,
reductions (matrix-product accumulation, softmax denominators, variances,
loss sums) are carried out in float64 and cast back, which keeps small-scale
training stable without doubling memory.

A recorded graph belongs to one training context and must not be shared
across threads; operations on disjoint tensors are otherwise pure.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True

# tanh-approximation GELU constants; differs from the exact-erf form by
# less than 1e-3 absolute over the real line.
_GELU_SCALE = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, generation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Row-major float array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: tuple["Tensor", ...] = (),
        _backward_fn: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        if arr.ndim == 0:
            # ascontiguousarray would promote 0-d scalars to 1-d
            self.data = np.asarray(arr, dtype=dtype)
        else:
            self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other, self.dtype))

    def __truediv__(self, scalar: float) -> "Tensor":
        return self * (1.0 / float(scalar))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return reduce_sum(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return transpose(self, axes)

    # -- autodiff -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients for every node reachable from this scalar.

        Repeated calls without ``zero_grad`` keep accumulating.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def init_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> Tensor:
    """Trainable parameter tensor with N(0, std) entries."""
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _common_dtype(a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise ValueError(f"mixed tensor dtypes: {a.dtype} vs {b.dtype}")
    return a.dtype


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward_fn=backward_fn)
    return Tensor(data)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad.astype(t.data.dtype, copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and structural ops ----------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _common_dtype(a, b)
    out = a.data + b.data

    def backward_fn(grad: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _common_dtype(a, b)
    out = a.data * b.data

    def backward_fn(grad: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.shape))

    return _record(out, (a, b), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def backward_fn(grad: np.ndarray) -> None:
        _accumulate(x, grad.reshape(x.shape))

    return _record(out, (x,), backward_fn)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward_fn(grad: np.ndarray) -> None:
        _accumulate(x, np.transpose(grad, inverse))

    return _record(out, (x,), backward_fn)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for axis of size {x.shape[0]}")
    out = x.data[idx]

    def backward_fn(grad: np.ndarray) -> None:
        if not x.requires_grad:
            return
        buffer = np.zeros_like(x.data)
        np.add.at(buffer, idx, grad.astype(x.data.dtype, copy=False))
        _accumulate(x, buffer)

    return _record(out, (x,), backward_fn)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    acc = x.data.astype(np.float64, copy=False).sum(axis=axis, keepdims=keepdims)
    out = np.asarray(acc, dtype=x.dtype)

    def backward_fn(grad: np.ndarray) -> None:
        g = grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _record(out, (x,), backward_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scales kept activations by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    out = x.data * mask

    def backward_fn(grad: np.ndarray) -> None:
        _accumulate(x, grad * mask)

    return _record(out, (x,), backward_fn)


# -- core math ops ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or stacked 3-D with equal batch dims."""
    _common_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs matrices, got shapes {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a64 = a.data.astype(np.float64, copy=False)
    b64 = b.data.astype(np.float64, copy=False)
    out = (a64 @ b64).astype(a.dtype, copy=False)

    def backward_fn(grad: np.ndarray) -> None:
        g64 = grad.astype(np.float64, copy=False)
        if a.requires_grad:
            _accumulate(a, g64 @ np.swapaxes(b64, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a64, -1, -2) @ g64)

    return _record(out, (a, b), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along ``axis``; rows sum to 1."""
    x64 = x.data.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out64 = exps / exps.sum(axis=axis, keepdims=True)
    out = out64.astype(x.dtype, copy=False)

    def backward_fn(grad: np.ndarray) -> None:
        g64 = grad.astype(np.float64, copy=False)
        inner = (out64 * g64).sum(axis=axis, keepdims=True)
        _accumulate(x, out64 * (g64 - inner))

    return _record(out, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ValueError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match feature dim {h}"
        )
    x64 = x.data.astype(np.float64, copy=False)
    mean = x64.mean(axis=-1, keepdims=True)
    centered = x64 - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normalized = centered * inv
    gain64 = gain.data.astype(np.float64, copy=False)
    out = (normalized * gain64 + bias.data.astype(np.float64, copy=False)).astype(x.dtype, copy=False)

    def backward_fn(grad: np.ndarray) -> None:
        g64 = grad.astype(np.float64, copy=False)
        if gain.requires_grad:
            axes = tuple(range(g64.ndim - 1))
            _accumulate(gain, (g64 * normalized).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(g64.ndim - 1))
            _accumulate(bias, g64.sum(axis=axes))
        if x.requires_grad:
            d_norm = g64 * gain64
            term = d_norm - d_norm.mean(axis=-1, keepdims=True)
            term -= normalized * (d_norm * normalized).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * term)

    return _record(out, (x, gain, bias), backward_fn)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x64 = x.data.astype(np.float64, copy=False)
    inner = _GELU_SCALE * (x64 + _GELU_CUBIC * x64 ** 3)
    tanh_inner = np.tanh(inner)
    out = (0.5 * x64 * (1.0 + tanh_inner)).astype(x.dtype, copy=False)

    def backward_fn(grad: np.ndarray) -> None:
        d_inner = _GELU_SCALE * (1.0 + 3.0 * _GELU_CUBIC * x64 ** 2)
        sech2 = 1.0 - tanh_inner ** 2
        local = 0.5 * (1.0 + tanh_inner) + 0.5 * x64 * sech2 * d_inner
        _accumulate(x, grad.astype(np.float64, copy=False) * local)

    return _record(out, (x,), backward_fn)


def cross_entropy(logits: Tensor, targets, reduction: str = "sum") -> Tensor:
    """Negative log softmax probability of each target id.

    ``logits`` is [t, vocab]; ``targets`` is a length-t id sequence. The
    per-position losses are summed by default or averaged with
    ``reduction="mean"``.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects [t, vocab] logits, got {logits.shape}")
    ids = np.asarray(targets, dtype=np.intp)
    if ids.ndim != 1 or ids.shape[0] != logits.shape[0]:
        raise ValueError(f"targets shape {ids.shape} does not match logits {logits.shape}")
    vocab = logits.shape[1]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"target id out of range for vocab size {vocab}")
    x64 = logits.data.astype(np.float64, copy=False)
    shift = x64.max(axis=1, keepdims=True)
    logsumexp = shift[:, 0] + np.log(np.exp(x64 - shift).sum(axis=1))
    nll = logsumexp - x64[np.arange(ids.shape[0]), ids]
    total = nll.sum() if reduction == "sum" else nll.mean()
    out = np.asarray(total, dtype=logits.dtype)

    def backward_fn(grad: np.ndarray) -> None:
        if not logits.requires_grad:
            return
        probs = np.exp(x64 - shift)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(ids.shape[0]), ids] -= 1.0
        if reduction == "mean":
            probs /= ids.shape[0]
        _accumulate(logits, grad.item() * probs)

    return _record(out, (logits,), backward_fn)
