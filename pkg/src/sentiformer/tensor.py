"""Dense tensors with reverse-mode automatic differentiation.

Storage is row-major numpy. Arrays are 2-D for weights and per-sample
activations; a leading batch axis (3-D) is allowed so that whole
mini-batches flow through one recorded graph. Broadcasting is restricted
to that leading axis plus row-wise bias adds; backward rules reduce
broadcast gradients back to the parameter shape.

Gradients accumulate: calling backward twice without clearing grads sums
the contributions. The optimizer is responsible for zeroing.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError, UsageError

SINGLE = np.float32
DOUBLE = np.float64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Test-only hook: scales the input gradient of gelu so a deliberately wrong
# backward rule can be injected (negative control for the gradient checker).
_grad_corruption = 1.0


def set_backward_corruption(scale: float) -> None:
    global _grad_corruption
    _grad_corruption = scale


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference/perturbed evals)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self):
        return SINGLE if self is Precision.SINGLE else DOUBLE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (SINGLE, DOUBLE):
            arr = arr.astype(DOUBLE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Topologically ordered record of the graph reaching one root tensor."""

    def __init__(self, nodes):
        self.nodes = list(nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order = []
        seen = set()
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep seeding d(loss)/d(loss) = 1."""
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = Tape.trace(loss)
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        # the common batched-activation x 2-D-weight case collapses to one
        # flat GEMM instead of a stack of per-sample products plus a reduction
        if a.requires_grad:
            if b.data.ndim == 2 and a.data.ndim == g.ndim:
                a.accumulate_grad(
                    (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.data.shape))
            else:
                a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and g.ndim > 2:
                b.accumulate_grad(a.data.reshape(-1, a.shape[-1]).T
                                  @ g.reshape(-1, g.shape[-1]))
            else:
                b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * s

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _make(out_data, (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    if a.data.ndim < 2:
        raise DimensionError(f"transpose needs a >=2-D tensor, got {a.shape}")
    out_data = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.swapaxes(g, -1, -2))

    return _make(out_data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _make(out_data, (a,), bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(extents)[:-1]

    def bwd(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return _make(out_data, tuple(tensors), bwd)


def select_row(a: Tensor, index: int) -> Tensor:
    """Pick one row along the second-to-last axis, dropping that axis."""
    out_data = a.data[..., index, :]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., index, :] = g
            a.accumulate_grad(full)

    return _make(out_data, (a,), bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    out_data = a.data[..., start:stop]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            a.accumulate_grad(full)

    return _make(out_data, (a,), bwd)


def split_heads(a: Tensor, n_heads: int) -> Tensor:
    """Regroup (..., L, h*d) into per-head stacks (..., h, L, d)."""
    if a.data.ndim < 2:
        raise DimensionError(f"split_heads needs a >=2-D tensor, got {a.shape}")
    if a.shape[-1] % n_heads:
        raise DimensionError(
            f"last axis {a.shape[-1]} is not divisible into {n_heads} heads")
    d = a.shape[-1] // n_heads
    out_data = np.swapaxes(a.data.reshape(a.data.shape[:-1] + (n_heads, d)), -2, -3)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.swapaxes(g, -2, -3).reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def merge_heads(a: Tensor) -> Tensor:
    """Inverse of split_heads: (..., h, L, d) back to (..., L, h*d)."""
    if a.data.ndim < 3:
        raise DimensionError(f"merge_heads needs a >=3-D tensor, got {a.shape}")
    swapped = np.swapaxes(a.data, -2, -3)
    out_data = swapped.reshape(swapped.shape[:-2] + (-1,))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.swapaxes(
                g.reshape(swapped.shape), -2, -3))

    return _make(out_data, (a,), bwd)


def tile_leading(a: Tensor, n: int) -> Tensor:
    """Repeat a tensor along a new leading batch axis."""
    out_data = np.broadcast_to(a.data, (n,) + a.shape).copy()

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.sum(axis=0))

    return _make(out_data, (a,), bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the second-to-last axis, keeping it with extent 1."""
    n = a.shape[-2]
    out_data = a.data.mean(axis=-2, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g / n, a.shape).copy())

    return _make(out_data, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    return _make(out_data, (a,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with row-max subtraction for stability."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            x.accumulate_grad(y * (g - inner))

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalize each row (last axis) to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2))

    return _make(y, (x, gamma, beta), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * phi_cdf

    def bwd(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x.accumulate_grad(g * (phi_cdf + x.data * pdf) * _grad_corruption)

    return _make(y, (x,), bwd)


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood with fused log-softmax.

    labels: integer array of shape (n,); validated by the caller.
    """
    labels = np.asarray(labels)
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    logp = z - lse
    n = z.shape[0]
    picked = logp[np.arange(n), labels]
    loss = np.asarray(-picked.mean(), dtype=z.dtype)

    def bwd(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(grad * (g / n))

    return _make(loss, (logits,), bwd)


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Compare tape gradients against central differences, coordinate by coordinate.

    f maps the given parameter list to a scalar Tensor. Returns the maximum
    over coordinates of |analytic - numeric| / max(1, |numeric|). Requires
    double precision; h must lie in [1e-6, 1e-4].
    """
    if not (1e-6 <= h <= 1e-4):
        raise UsageError(f"finite-difference step h={h} outside [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        if p.dtype != DOUBLE:
            raise UsageError("finite_diff_check requires double-precision parameters")
        p.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite at the evaluation point")
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    max_err = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(params).data)
                flat[i] = orig - h
                fm = float(f(params).data)
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NumericError("objective became non-finite during perturbation")
                numeric = (fp - fm) / (2.0 * h)
                err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
                if err > max_err:
                    max_err = err
    return max_err


def zeros(shape, dtype=SINGLE, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)
