"""Posterior-predictive data reconstruction for BSC and SSSC.

Pixel estimates are expectations of the observable mean under the truncated
posterior: W_d <s> for BSC and W_d <s*z> for SSSC, where <s*z> averages the
per-state posterior slab means kappa_s with the set's softmax weights. The
binary-observable noisy-OR model has no such estimator here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathutil import posterior_weights
from .models import kind_of
from .models.bsc import BscParams
from .models.sssc import SsscParams, eval_states
from .variational import LatentStateSet, StateSetCollection


@dataclass
class Reconstruction:
    values: np.ndarray  # one estimate per requested coordinate
    coords: np.ndarray  # the d-indices that were estimated

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.int64)
        if self.values.shape != self.coords.shape:
            raise ValueError("one value per coordinate required")


def _as_coords(coords, d: int) -> np.ndarray:
    if coords is None:
        return np.arange(d)
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size and (coords.min() < 0 or coords.max() >= d):
        raise ValueError("target coordinates out of range")
    return coords


def estimate_bsc(state_set: LatentStateSet, params: BscParams, coords=None) -> Reconstruction:
    coords = _as_coords(coords, params.d)
    w = state_set.weights()
    mean_s = w @ state_set.states.astype(np.float64)
    return Reconstruction(values=params.W[coords] @ mean_s, coords=coords)


def estimate_sssc(state_set: LatentStateSet, params: SsscParams, y, mask=None, coords=None) -> Reconstruction:
    """Estimate target coordinates from the observed part of one datapoint.

    kappa is computed with W and y restricted to the observed coordinates;
    the prediction then extends to any requested coordinate.
    """
    coords = _as_coords(coords, params.d)
    y = np.asarray(y, dtype=np.float64)[None]
    m = None if mask is None else np.asarray(mask, bool)[None]
    _, kappa, _ = eval_states(state_set.states[None], y, m, params, want_kappa=True)
    mean_sz = state_set.weights() @ kappa[0]
    return Reconstruction(values=params.W[coords] @ mean_sz, coords=coords)


def predict_all(sets: StateSetCollection, params, data, block: int = 4096) -> np.ndarray:
    """Posterior-predictive means for all coordinates of all datapoints, (N, D)."""
    kind = kind_of(params)
    out = np.empty((sets.n, params.d))
    for a in range(0, sets.n, block):
        b = min(a + block, sets.n)
        w = posterior_weights(sets.lpj[a:b], axis=1)
        if kind == "bsc":
            mean_s = np.einsum("ns,nsh->nh", w, sets.states[a:b].astype(np.float64))
            out[a:b] = mean_s @ params.W.T
        elif kind == "sssc":
            m = None if data.mask is None else data.mask[a:b]
            _, kappa, _ = eval_states(sets.states[a:b], data.Y[a:b], m, params, want_kappa=True)
            mean_sz = np.einsum("ns,nsh->nh", w, kappa)
            out[a:b] = mean_sz @ params.W.T
        else:
            raise ValueError(f"no posterior-predictive estimator for model {kind!r}")
    return out
