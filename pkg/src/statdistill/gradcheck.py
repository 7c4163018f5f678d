"""Finite-difference verification of reverse-mode gradients.

The checker perturbs every input element by +/-h, rebuilds the forward
pass each time, and compares the central-difference estimate against the
analytic gradient from backward(). It requires float64 inputs; float32
rounding would drown the signal at the default step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep."""

    max_rel_err: float
    max_abs_err: float
    n_elements: int
    tol: float
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(f, inputs, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` against central differences.

    ``inputs`` is a Tensor or list of Tensors that require grad; ``f`` is
    called as ``f(*inputs)`` and must rebuild its graph on every call.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        if t.dtype != np.float64:
            raise UsageError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise UsageError("grad_check inputs must require grad")

    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise UsageError("grad_check target must return a scalar")
    out.backward()
    analytic = [t.grad.copy() for t in inputs]

    max_rel = 0.0
    max_abs = 0.0
    worst: tuple = ()
    n_elements = 0
    for t_idx, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(*inputs).item()
            flat[i] = orig - h
            f_minus = f(*inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[t_idx].reshape(-1)[i])
            rel = _rel_err(a, numeric)
            if rel > max_rel:
                max_rel = rel
                worst = (t_idx, i, a, numeric)
            max_abs = max(max_abs, abs(a - numeric))
            n_elements += 1
    return GradCheckReport(max_rel, max_abs, n_elements, tol, worst)
