"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient and a backward
closure. Ops build a DAG; Tensor.backward() walks it once in reverse
creation order (children strictly before parents, deterministic) and
accumulates gradients additively into every reachable tensor that has
requires_grad set. Gradients persist until explicitly cleared, so
callers must zero between optimization steps.

Broadcasting is deliberately narrow. Binary ops accept:
  * equal shapes,
  * a scalar () operand against anything,
  * add/sub of a (d,) vector onto an (n, d) matrix (bias pattern).
Anything else is a contract violation. All data is float64; debug mode
(set_debug) additionally checks every op output and every accumulated
gradient for NaN/Inf.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolationError, DegenerateInputError

_seq = itertools.count()
_debug = False


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checking after every op (and on created leaves)."""
    global _debug
    _debug = bool(flag)


def debug_enabled() -> bool:
    return _debug


def _check_finite(arr: np.ndarray, context: str) -> None:
    if not np.isfinite(arr).all():
        raise ContractViolationError(f"non-finite values in {context}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, *,
                 op: str = "leaf",
                 parents: tuple["Tensor", ...] = (),
                 backward: Callable[[], None] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward = backward
        self._seq = next(_seq)
        if _debug:
            _check_finite(arr, f"op '{op}'")

    # -- basics ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolationError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operators (thin wrappers over module ops) --------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)

    # -- backward ----------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the whole graph."""
        if self.data.size != 1:
            raise ContractViolationError(
                f"backward() requires a scalar output, got shape {self.shape}")
        visited: set[int] = set()
        nodes: list[Tensor] = []
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in visited:
                continue
            visited.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        # Parents are always created before children, so descending
        # creation order is a reverse topological order of the DAG.
        nodes.sort(key=lambda n: n._seq, reverse=True)
        self._accumulate(np.ones_like(self.data))
        for node in nodes:
            if node._backward is not None and node.requires_grad:
                node._backward()
        if _debug:
            for node in nodes:
                if node.grad is not None:
                    _check_finite(node.grad, f"grad of op '{node.op}'")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(data) -> Tensor:
    """A leaf tensor that never receives gradient."""
    return Tensor(data, requires_grad=False)


# -- shape plumbing for the narrow broadcast rules ---------------------

def _broadcast_ok(a: Tensor, b: Tensor, bias_ok: bool) -> None:
    if a.shape == b.shape:
        return
    if a.shape == () or b.shape == ():
        return
    if bias_ok and a.ndim == 2 and b.shape == (a.shape[1],):
        return
    raise ContractViolationError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # (n, d) gradient onto a (d,) bias
    return g.sum(axis=0)


# -- elementwise and linear ops ----------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_ok(a, b, bias_ok=True)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad,
                 op="add", parents=(a, b))

    def backward():
        g = out.grad
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(g, b.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_ok(a, b, bias_ok=True)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad,
                 op="sub", parents=(a, b))

    def backward():
        g = out.grad
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(-g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; equal shapes or a scalar operand."""
    _broadcast_ok(a, b, bias_ok=False)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad,
                 op="mul", parents=(a, b))

    def backward():
        g = out.grad
        a._accumulate(_reduce_to(g * b.data, a.shape))
        b._accumulate(_reduce_to(g * a.data, b.shape))

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float (no graph node for the constant)."""
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad, op="scale", parents=(a,))

    def backward():
        a._accumulate(out.grad * c)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolationError(
            f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractViolationError(
            f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad,
                 op="matmul", parents=(a, b))

    def backward():
        g = out.grad
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ContractViolationError(f"transpose needs a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T.copy(), a.requires_grad, op="transpose", parents=(a,))

    def backward():
        a._accumulate(out.grad.T)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad, op="relu", parents=(a,))

    def backward():
        a._accumulate(out.grad * (a.data > 0.0))

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    val = np.tanh(a.data)
    out = Tensor(val, a.requires_grad, op="tanh", parents=(a,))

    def backward():
        a._accumulate(out.grad * (1.0 - val * val))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        val = np.exp(a.data)
    out = Tensor(val, a.requires_grad, op="exp", parents=(a,))

    def backward():
        a._accumulate(out.grad * out.data)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(a.data)
    out = Tensor(val, a.requires_grad, op="log", parents=(a,))

    def backward():
        a._accumulate(out.grad / a.data)

    out._backward = backward
    return out


# -- reductions --------------------------------------------------------

def _check_axis(a: Tensor, axis: int | None) -> None:
    if axis is None:
        return
    if a.ndim != 2 or axis not in (0, 1):
        raise ContractViolationError(
            f"axis={axis} unsupported for shape {a.shape} (2-D, axis 0/1 only)")


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    _check_axis(a, axis)
    out = Tensor(a.data.sum(axis=axis), a.requires_grad, op="sum", parents=(a,))

    def backward():
        g = out.grad
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(np.float64))
        elif axis == 0:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            a._accumulate(np.broadcast_to(g[:, None], a.shape).copy())

    out._backward = backward
    return out


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ContractViolationError("mean over an empty axis")
    return scale(tsum(a, axis), 1.0 / n)


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    """Numerically stable log-sum-exp; axis None (all) or 1 (per row)."""
    if axis not in (None, 1):
        raise ContractViolationError(f"logsumexp axis must be None or 1, got {axis}")
    if axis == 1 and a.ndim != 2:
        raise ContractViolationError(f"logsumexp axis=1 needs 2-D input, got {a.shape}")
    if axis is None:
        m = a.data.max()
        val = m + np.log(np.exp(a.data - m).sum())
        out = Tensor(val, a.requires_grad, op="logsumexp", parents=(a,))

        def backward():
            soft = np.exp(a.data - out.data)
            a._accumulate(out.grad * soft)
    else:
        m = a.data.max(axis=1, keepdims=True)
        val = (m + np.log(np.exp(a.data - m).sum(axis=1, keepdims=True))).ravel()
        out = Tensor(val, a.requires_grad, op="logsumexp", parents=(a,))

        def backward():
            soft = np.exp(a.data - out.data[:, None])
            a._accumulate(out.grad[:, None] * soft)

    out._backward = backward
    return out


# -- composite ops -----------------------------------------------------

def l2_normalize(a: Tensor, *, min_norm: float = 1e-12) -> Tensor:
    """Normalize each row of a 2-D tensor to unit Euclidean norm."""
    if a.ndim != 2:
        raise ContractViolationError(f"l2_normalize needs a 2-D tensor, got {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    if (norms <= min_norm).any():
        bad = int(np.argmin(norms))
        raise DegenerateInputError(
            f"row {bad} has norm {norms[bad]:.3e} <= {min_norm:.0e}; cannot normalize")
    val = a.data / norms[:, None]
    out = Tensor(val, a.requires_grad, op="l2_normalize", parents=(a,))

    def backward():
        g = out.grad
        # d(x/|x|)/dx = I/|x| - x x^T / |x|^3, applied row-wise
        dot = (g * a.data).sum(axis=1)
        a._accumulate(g / norms[:, None] - a.data * (dot / norms ** 3)[:, None])

    out._backward = backward
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer labels."""
    if logits.ndim != 2:
        raise ContractViolationError(f"logits must be 2-D, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise ContractViolationError(
            f"labels must be int with shape ({logits.shape[0]},), got "
            f"{labels.dtype} {labels.shape}")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ContractViolationError(f"labels out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits.data - m).sum(axis=1, keepdims=True))).ravel()
    picked = logits.data[np.arange(n), labels]
    out = Tensor((lse - picked).mean(), logits.requires_grad,
                 op="softmax_cross_entropy", parents=(logits,))

    def backward():
        soft = np.exp(logits.data - lse[:, None])
        soft[np.arange(n), labels] -= 1.0
        logits._accumulate(out.grad * soft / n)

    out._backward = backward
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a 2-D tensor."""
    if a.ndim != 2:
        raise ContractViolationError(f"slice_rows needs a 2-D tensor, got {a.shape}")
    if not (0 <= start < stop <= a.shape[0]):
        raise ContractViolationError(
            f"bad row slice [{start}:{stop}] for {a.shape[0]} rows")
    out = Tensor(a.data[start:stop].copy(), a.requires_grad,
                 op="slice_rows", parents=(a,))

    def backward():
        g = np.zeros_like(a.data)
        g[start:stop] = out.grad
        a._accumulate(g)

    out._backward = backward
    return out


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors vertically (equal widths)."""
    if not tensors:
        raise ContractViolationError("concat_rows needs at least one tensor")
    width = None
    for t in tensors:
        if t.ndim != 2:
            raise ContractViolationError(f"concat_rows needs 2-D tensors, got {t.shape}")
        if width is None:
            width = t.shape[1]
        elif t.shape[1] != width:
            raise ContractViolationError(
                f"concat_rows width mismatch: {t.shape[1]} vs {width}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0),
                 any(t.requires_grad for t in tensors),
                 op="concat_rows", parents=tuple(tensors))

    def backward():
        g = out.grad
        row = 0
        for t in tensors:
            n = t.shape[0]
            t._accumulate(g[row:row + n])
            row += n

    out._backward = backward
    return out


def stop_gradient(a: Tensor) -> Tensor:
    """Forward the values, block the gradient.

    The result is a constant leaf: upstream gradient through it is
    exactly zero (it is never accumulated at all), and the original
    tensor is untouched.
    """
    return Tensor(a.data.copy(), requires_grad=False, op="stop_gradient")


class BatchNormState:
    """Running statistics for one batch-norm layer (mutable buffers)."""

    __slots__ = ("running_mean", "running_var", "initialized")

    def __init__(self, dim: int):
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)
        self.initialized = False

    def copy(self) -> "BatchNormState":
        st = BatchNormState(self.running_mean.shape[0])
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        st.initialized = self.initialized
        return st


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool, *, momentum: float = 0.9, eps: float = 1e-5,
               update_running: bool = True) -> Tensor:
    """Batch normalization over axis 0 of a 2-D tensor.

    Training mode standardizes with batch statistics (biased variance)
    and, unless update_running is False, folds them into the running
    buffers: r <- momentum * r + (1 - momentum) * batch_stat. Eval mode
    standardizes with the running buffers and treats them as constants.
    """
    if x.ndim != 2:
        raise ContractViolationError(f"batch_norm needs a 2-D input, got {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ContractViolationError(
            f"gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}")
    if training:
        if x.shape[0] < 2:
            raise ContractViolationError("batch_norm training mode needs >= 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_running:
            if state.initialized:
                state.running_mean = momentum * state.running_mean + (1 - momentum) * mu
                state.running_var = momentum * state.running_var + (1 - momentum) * var
            else:
                state.running_mean = mu.copy()
                state.running_var = var.copy()
                state.initialized = True
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(xhat * gamma.data + beta.data,
                 x.requires_grad or gamma.requires_grad or beta.requires_grad,
                 op="batch_norm", parents=(x, gamma, beta))

    def backward():
        g = out.grad
        gamma._accumulate((g * xhat).sum(axis=0))
        beta._accumulate(g.sum(axis=0))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data
        if training:
            n = x.shape[0]
            # Standard batch-norm input gradient with batch statistics.
            term = gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0)
            x._accumulate(term * inv_std)
        else:
            x._accumulate(gxhat * inv_std)

    out._backward = backward
    return out


# -- verification ------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Compare backprop gradients of scalar-valued f against central
    finite differences at x. Returns the worst relative mismatch.

    f must be deterministic and free of side effects (it is called
    2*size + 1 times). h must lie in [1e-7, 1e-3].
    """
    if not (1e-7 <= h <= 1e-3):
        raise ContractViolationError(f"grad_check step h={h} outside [1e-7, 1e-3]")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractViolationError("grad_check needs f to return a scalar Tensor")
    out.backward()
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad.copy()

    worst = 0.0
    for idx in np.ndindex(*x0.shape) if x0.shape else [()]:
        hi = x0.copy()
        lo = x0.copy()
        hi[idx] += h
        lo[idx] -= h
        fd = (f(Tensor(hi)).item() - f(Tensor(lo)).item()) / (2.0 * h)
        a = analytic[idx] if x0.shape else float(analytic)
        denom = max(1.0, abs(a), abs(fd))
        worst = max(worst, abs(a - fd) / denom)
    return worst
