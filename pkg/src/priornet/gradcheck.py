"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from priornet.ops import trace_branches
from priornet.tensor import Tensor, backward


class KinkCrossed(ArithmeticError):
    """A finite-difference stencil moved a ReLU or max-pool onto another branch."""


def _branches(fn: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    with trace_branches() as trace:
        value = fn().item()
    return value, trace


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-3,
                   indices: Sequence[tuple[int, ...]] | None = None,
                   kink_guard: bool = False) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place.

    When ``indices`` is given only those coordinates are filled in; the rest
    of the returned array is NaN. With ``kink_guard`` every evaluation must
    take the same ReLU / max-pool branches as the unperturbed one, otherwise
    :class:`KinkCrossed` is raised.
    """
    if t.dtype != np.float64:
        raise TypeError("finite differences need a float64 tensor")
    base = _branches(fn)[1] if kink_guard else None
    grad = np.full(t.shape, np.nan)
    coords = indices if indices is not None else list(np.ndindex(*t.shape))
    for idx in coords:
        orig = t.data[idx]
        vals = []
        for step in (h, -h):
            t.data[idx] = orig + step
            if kink_guard:
                v, trace = _branches(fn)
                if not _same(trace, base):
                    t.data[idx] = orig
                    raise KinkCrossed(f"perturbing {t.name or 'tensor'}{idx} by {step:+g} changes a branch")
            else:
                v = fn().item()
            vals.append(v)
        t.data[idx] = orig
        grad[idx] = (vals[0] - vals[1]) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference over the larger of the two max magnitudes.

    Coordinates where ``numeric`` is NaN (not sampled) are ignored.
    """
    mask = ~np.isnan(numeric)
    a, n = np.asarray(analytic)[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-3,
                    max_coords: int | None = None, rng: np.random.Generator | None = None,
                    kink_guard: bool = False) -> dict[str, float]:
    """Compare analytic and numeric gradients of scalar ``fn()`` w.r.t. each tensor.

    Returns a mapping of tensor name (or position) to relative error. With
    ``max_coords`` set, tensors larger than that are spot-checked at a random
    subset of coordinates drawn from ``rng``.
    """
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    backward(fn())
    errors = {}
    for pos, t in enumerate(tensors):
        indices = None
        if max_coords is not None and t.size > max_coords:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.size, size=max_coords, replace=False)
            indices = [np.unravel_index(i, t.shape) for i in sorted(flat)]
        numeric = numerical_grad(fn, t, h=h, indices=indices, kink_guard=kink_guard)
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        errors[t.name or str(pos)] = relative_error(analytic, numeric)
    return errors
