"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every operation that produces a tensor from inputs requiring gradient
attaches those inputs and a backward closure to its output. That linked
graph is the execution record that ``backward`` replays in reverse
topological order, accumulating into ``.grad``. Accumulation is additive,
so training code zeroes gradients between optimizer steps.

Two precisions are supported: float32 for training and float64 for
numerical verification (finite-difference gradient checks). Binary
operations refuse mixed precision rather than silently upcasting.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import InputError, ShapeError, UsageError

STANDARD_DTYPE = np.float32
HIGH_DTYPE = np.float64

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable gradient recording inside the context (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally tracked for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise UsageError("Tensor wraps raw array data, not another Tensor")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(HIGH_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaf tensors that require grad always expose an accumulator so a
        # zeroed gradient is observable even before the first backward pass.
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

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

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    # -- graph plumbing ------------------------------------------------------

    def _attach(self, parents, backward_fn) -> None:
        """Record parents and a backward closure on this (op output) tensor."""
        self.requires_grad = True
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    def _accum_grad(self, g) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        np.add(self.grad, g, out=self.grad)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        """Return a tensor sharing this data but cut off from the graph."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable requires_grad tensor.

        self must be a scalar produced by recorded operations. Gradients
        accumulate (+=); calling backward twice doubles them.
        """
        if self.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward on a tensor with no recorded gradient path")
        order = _toposort(self)
        self._accum_grad(np.ones_like(self.data))
        for node in reversed(order):
            node._backward_fn(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def _binary_check(self, other: "Tensor", op: str) -> None:
        if self.data.shape != other.data.shape:
            raise ShapeError(
                f"{op}: operand shapes differ, {self.data.shape} vs {other.data.shape}"
            )
        if self.data.dtype != other.data.dtype:
            raise UsageError(
                f"{op}: mixed precision {self.data.dtype} vs {other.data.dtype}"
            )

    def __add__(self, other):
        if not isinstance(other, Tensor):
            return self._scalar_affine(float(other), 1.0)
        self._binary_check(other, "add")
        out = Tensor(self.data + other.data)
        if _needs_grad(self, other):
            a, b = self, other

            def backward(g):
                if a.requires_grad:
                    a._accum_grad(g)
                if b.requires_grad:
                    b._accum_grad(g)

            out._attach((a, b), backward)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self._scalar_affine(-float(other), 1.0)
        self._binary_check(other, "sub")
        out = Tensor(self.data - other.data)
        if _needs_grad(self, other):
            a, b = self, other

            def backward(g):
                if a.requires_grad:
                    a._accum_grad(g)
                if b.requires_grad:
                    b._accum_grad(-g)

            out._attach((a, b), backward)
        return out

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            return self._scalar_affine(0.0, float(other))
        self._binary_check(other, "mul")
        out = Tensor(self.data * other.data)
        if _needs_grad(self, other):
            a, b = self, other
            adata, bdata = self.data, other.data

            def backward(g):
                if a.requires_grad:
                    a._accum_grad(g * bdata)
                if b.requires_grad:
                    b._accum_grad(g * adata)

            out._attach((a, b), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            return self._scalar_affine(0.0, 1.0 / float(other))
        self._binary_check(other, "div")
        out = Tensor(self.data / other.data)
        if _needs_grad(self, other):
            a, b = self, other
            bdata, odata = other.data, out.data

            def backward(g):
                if a.requires_grad:
                    a._accum_grad(g / bdata)
                if b.requires_grad:
                    b._accum_grad(-g * odata / bdata)

            out._attach((a, b), backward)
        return out

    def __neg__(self):
        return self._scalar_affine(0.0, -1.0)

    def _scalar_affine(self, shift: float, scale: float) -> "Tensor":
        """Elementwise scale * self + shift with python-float constants."""
        out = Tensor(self.data * scale + shift if shift != 0.0 else self.data * scale)
        if _needs_grad(self):
            src = self

            def backward(g):
                src._accum_grad(g * scale)

            out._attach((src,), backward)
        return out

    def sqrt(self) -> "Tensor":
        if np.any(self.data < 0):
            raise InputError("sqrt of a tensor with negative entries")
        out = Tensor(np.sqrt(self.data))
        if _needs_grad(self):
            src, odata = self, out.data

            def backward(g):
                src._accum_grad(g / (2.0 * odata))

            out._attach((src,), backward)
        return out

    def sum(self) -> "Tensor":
        """Sum of all elements, as a scalar tensor."""
        out = Tensor(self.data.sum())
        if _needs_grad(self):
            src = self

            def backward(g):
                src._accum_grad(np.broadcast_to(g, src.data.shape))

            out._attach((src,), backward)
        return out

    def reshape(self, shape) -> "Tensor":
        out = Tensor(self.data.reshape(shape))
        if _needs_grad(self):
            src = self

            def backward(g):
                src._accum_grad(g.reshape(src.data.shape))

            out._attach((src,), backward)
        return out


def _needs_grad(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _toposort(root: Tensor) -> list:
    """Post-order over op nodes (tensors carrying a backward closure)."""
    order: list = []
    visited: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for parent in node._parents:
            if parent._backward_fn is not None and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Module-level alias for Tensor.backward."""
    loss.backward()
