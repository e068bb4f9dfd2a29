"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tape import Tape, Tensor


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                       indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x``, perturbing ``x`` in place.

    If ``indices`` is given only those entries are evaluated; the rest stay 0.
    """
    grad = np.zeros_like(x)
    it = indices if indices is not None else list(np.ndindex(*x.shape))
    for idx in it:
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest gradient magnitude of either side."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(forward: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> list[float]:
    """Compare tape gradients of ``total(forward() * R)`` with finite differences.

    ``forward`` must rebuild the graph from ``tensors`` on every call. Each
    tensor must have ``requires_grad``. ``R`` is a fixed random projection so
    non-scalar outputs are reduced to a scalar with non-trivial weights.
    Returns one relative error per tensor.
    """
    from . import ops

    rng = rng or np.random.default_rng(0)
    probe = forward().data
    R = rng.standard_normal(probe.shape) if probe.size > 1 else np.ones(probe.shape)

    def scalar() -> float:
        return float((forward().data * R).sum())

    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = forward()
        loss = ops.total(ops.mul(out, Tensor(R))) if out.data.size > 1 else out
    tape.backward(loss)

    errors = []
    for t in tensors:
        idx = None
        if max_entries is not None and t.data.size > max_entries:
            flat = rng.choice(t.data.size, size=max_entries, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            numeric = numerical_gradient(scalar, t.data, h, idx)
            mask = np.zeros(t.shape, dtype=bool)
            for i in idx:
                mask[i] = True
            errors.append(relative_error(t.grad[mask], numeric[mask]))
        else:
            numeric = numerical_gradient(scalar, t.data, h)
            errors.append(relative_error(t.grad, numeric))
    return errors
