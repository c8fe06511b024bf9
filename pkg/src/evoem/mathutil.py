"""Small numerical helpers used across modules."""

from __future__ import annotations

import numpy as np

# Stand-in for log(0) of the zero-state exception of binary-observable
# models. Chosen far below any reachable log density but small enough to
# survive sums without overflowing.
LARGE_NEG = -1e30


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(a))) with max-subtraction.

    Finite inputs only (the LARGE_NEG sentinel is finite, and it never wins
    the max when any ordinary value is present).
    """
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def posterior_weights(lpj: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalized truncated-posterior weights: softmax of cached lpj values."""
    lpj = np.asarray(lpj, dtype=np.float64)
    m = np.max(lpj, axis=axis, keepdims=True)
    e = np.exp(lpj - m)
    return e / np.sum(e, axis=axis, keepdims=True)
