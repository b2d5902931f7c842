"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .core import HistorySegment, as_state

check_state = as_state


def check_states(X, d=None) -> np.ndarray:
    """2-D finite float array of states, one per row."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if d in (None, 1) else X.reshape(1, -1)
    if d is not None and X.shape[1] != d:
        raise ValueError(f"X has {X.shape[1]} features, expected {d}")
    return X


def check_times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("at least one time is required")
    if not np.all(np.isfinite(t)):
        raise ValueError("times must be finite")
    return t


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_nonnegative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a nonnegative finite number, got {value!r}")
    return float(value)


def check_initial(initial, d: int, r: float):
    """A state for ODE problems (r == 0 without history) or a segment on [-r, 0]."""
    if isinstance(initial, HistorySegment):
        if initial.dim != d:
            raise ValueError(f"initial segment has dimension {initial.dim}, expected {d}")
        return initial
    x = np.asarray(initial, dtype=float).ravel()
    return as_state(x, d)
