"""Finite-difference gradient checking utilities.

Central differences provide an oracle that is independent of the tape: the
checked function is re-evaluated at perturbed inputs, so any systematic error
in a backward rule shows up as a large relative error.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

Array = np.ndarray


def central_difference(
    f: Callable[[Array], float],
    x: Array,
    h: float = 1e-5,
    coords: np.ndarray | None = None,
) -> Array:
    """Central-difference gradient of a scalar function at x.

    coords, when given, restricts the estimate to those flat indices; the
    remaining entries of the result are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_idx = range(x.size) if coords is None else np.asarray(coords, dtype=np.int64)
    for i in flat_idx:
        bump = np.zeros_like(x)
        bump.flat[i] = h
        grad.flat[i] = (f(x + bump) - f(x - bump)) / (2.0 * h)
    return grad


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    """|a-b| scaled by the larger magnitude; 0 when both are below floor."""
    denom = max(abs(a), abs(b))
    if denom < floor:
        return 0.0
    return abs(a - b) / denom


def check_gradients(
    loss_fn: Callable[[Mapping[str, Array]], float],
    params: Mapping[str, Array],
    analytic: Mapping[str, Array],
    h: float = 1e-5,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_fn re-evaluates the full pipeline from a fresh parameter mapping.
    When samples_per_param is set, only that many randomly chosen coordinates
    per parameter are probed (finite differences over every coordinate of an
    embedding table would dominate the runtime without adding coverage).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    base = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    for name, arr in base.items():
        n = arr.size
        if samples_per_param is None or samples_per_param >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for i in coords:
            bump = np.zeros_like(arr)
            bump.flat[i] = h
            hi = dict(base)
            hi[name] = arr + bump
            lo = dict(base)
            lo[name] = arr - bump
            numeric = (loss_fn(hi) - loss_fn(lo)) / (2.0 * h)
            worst = max(worst, relative_error(float(analytic[name].flat[i]), numeric))
    return worst
