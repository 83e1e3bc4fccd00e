"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

GradFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def grad_check(fn: GradFn, params: np.ndarray, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-8).

    fn maps a flat parameter array to (scalar value, analytic gradient); the
    analytic gradient is evaluated once at params and each coordinate is
    probed with a symmetric step.
    """
    params = np.asarray(params, dtype=np.float64)
    _, analytic = fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ValueError(f"gradient shape {analytic.shape} != params {params.shape}")
    worst = 0.0
    for i in range(params.size):
        probe = params.copy()
        probe[i] += step
        hi, _ = fn(probe)
        probe[i] = params[i] - step
        lo, _ = fn(probe)
        central = (hi - lo) / (2.0 * step)
        err = abs(analytic[i] - central) / (abs(analytic[i]) + abs(central) + 1e-8)
        worst = max(worst, err)
    return worst
