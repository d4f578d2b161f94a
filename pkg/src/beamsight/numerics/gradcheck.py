"""Central finite differences for checking the autodiff path."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def finite_difference_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-4,
                           indices=None) -> np.ndarray:
    """∂fn/∂param by central differences at the flat ``indices`` (all if None).

    Entries not in ``indices`` are left as NaN.
    """
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().data)
            flat[i] = orig - step
            fm = float(fn().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """‖a − n‖ / max(‖a‖, ‖n‖, floor) over the finite entries of ``numeric``."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    mask = np.isfinite(n)
    a, n = a[mask], n[mask]
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
