"""Noisy-OR Bayes net: binary latents, binary observables.

Generative process: s_h ~ Bern(pi_h); active latents turn observable d on
with probability N_d(s) = 1 - prod_h (1 - W_dh s_h); y_d ~ Bern(N_d(s)).

Log-pseudo-joint and constant:

    lpj(s, y) = sum_d [ y_d log N_d(s) + (1-y_d) log(1-N_d(s)) ]
                + sum_h s_h log(pi_h/(1-pi_h))
    C(theta)  = sum_h log(1-pi_h)

The all-zero state is a special case: its joint is exactly zero unless the
(observed part of) y is all-zero, encoded with the LARGE_NEG sentinel.

W entries are clamped to [EPS_W, 1-EPS_W] after every update; the
fixed-point denominators are singular at 0 and 1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bitpack import unique_rows
from ..datasets import DataSet
from ..mathutil import LARGE_NEG, posterior_weights

EPS_W = 1e-6
PI_CLAMP = 1e-5


@dataclass
class NoisyOrParams:
    pi: np.ndarray  # (H,)
    W: np.ndarray  # (D, H)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.pi.ndim != 1 or self.W.ndim != 2 or self.W.shape[1] != self.pi.shape[0]:
            raise ValueError("need pi of shape (H,) and W of shape (D, H)")
        if not ((self.pi > 0) & (self.pi < 1)).all():
            raise ValueError("all pi_h must lie in (0, 1)")
        if not ((self.W >= 0) & (self.W <= 1)).all():
            raise ValueError("all W_dh must lie in [0, 1]")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def h(self) -> int:
        return self.W.shape[1]


def model_sparsity(params: NoisyOrParams) -> float:
    return float(params.pi.sum())


def log_constant(params: NoisyOrParams, d_obs=None):
    # No dependence on the observed count for this model.
    c = float(np.log1p(-params.pi).sum())
    if d_obs is None:
        return c
    d_obs = np.asarray(d_obs)
    return c if d_obs.ndim == 0 else np.full(d_obs.shape, c)


def _zero_ok(Y, mask):
    """Per-datapoint flag: observed part of y entirely zero."""
    zero = Y == 0
    if mask is not None:
        zero = zero | ~mask
    return zero.all(axis=-1)


def _use_unique_route(h: int, n: int) -> bool:
    # Deduplicating states pays off when the whole state space is small;
    # the (unique x datapoint) cross matrices must stay modest.
    return h <= 20 and (1 << h) * n <= (1 << 24)


def _lpj_unique(states, Y, mask, params: NoisyOrParams):
    b, k, h = states.shape
    flat = states.reshape(b * k, h)
    ubits, inv = unique_rows(flat)
    uf = ubits.astype(np.float64)
    log_prod = uf @ np.log1p(-params.W).T  # (U, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.log1p(-np.exp(log_prod)) - log_prod
        prior = uf @ np.log(params.pi / (1.0 - params.pi))
        yw = Y if mask is None else np.where(mask, Y, 0.0)
        cross = delta @ yw.T  # (U, B)
        n_idx = np.repeat(np.arange(b), k)
        out = prior[inv] + cross[inv, n_idx]
        if mask is None:
            out += log_prod.sum(axis=1)[inv]
        else:
            out += (log_prod @ mask.T.astype(np.float64))[inv, n_idx]
    zero_u = ubits.sum(axis=1) == 0
    if zero_u.any():
        ok = _zero_ok(Y, mask)
        zp = zero_u[inv]
        out[zp] = np.where(ok[n_idx[zp]], 0.0, LARGE_NEG)
    return out.reshape(b, k)


def lpj(states: np.ndarray, Y: np.ndarray, mask, params: NoisyOrParams) -> np.ndarray:
    """Batched log-pseudo-joints, states (..., K, H), Y (..., D) -> (..., K)."""
    s = np.asarray(states, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if s.shape[-1] != params.h or Y.shape[-1] != params.d:
        raise ValueError("state/data dimensions do not match the parameters")
    if s.ndim == 3 and _use_unique_route(params.h, s.shape[0]):
        return _lpj_unique(
            np.ascontiguousarray(states, dtype=np.uint8), Y, mask, params
        )
    log_off = np.log1p(-params.W)  # (D, H), log(1 - W_dh)
    log_prod = (s.reshape(-1, params.h) @ log_off.T).reshape(
        s.shape[:-1] + (params.d,)
    )  # log(1 - N_d(s))
    # sum_d y log N + (1-y) log(1-N) == sum_{d obs} log(1-N) + sum y (log N - log(1-N))
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.log1p(-np.exp(log_prod))
        delta -= log_prod
        yw = Y if mask is None else np.where(mask, Y, 0.0)
        out = np.einsum("...kd,...d->...k", delta, yw)
        if mask is None:
            out += log_prod.sum(axis=-1)
        else:
            out += np.einsum("...kd,...d->...k", log_prod, mask.astype(np.float64))
        out += s @ np.log(params.pi / (1.0 - params.pi))
    zero_state = s.sum(axis=-1) == 0
    if zero_state.any():
        ok = _zero_ok(Y, mask)[..., None]
        out = np.where(zero_state, np.where(ok, 0.0, LARGE_NEG), out)
    return out


def log_pseudo_joint(state, y, mask, params: NoisyOrParams) -> float:
    s = np.asarray(state, dtype=np.uint8)[None, :]
    y = np.asarray(y, dtype=np.float64)[None, :]
    m = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
    return float(lpj(s[None], y, m, params)[0, 0])


def sample(params: NoisyOrParams, n: int, rng: np.random.Generator):
    s = (rng.random((n, params.h)) < params.pi).astype(np.uint8)
    on_prob = -np.expm1(s.astype(np.float64) @ np.log1p(-params.W).T)
    Y = (rng.random((n, params.d)) < on_prob).astype(np.float64)
    return DataSet(Y), {"s": s}


# ---------------------------------------------------------------------------
# M-step: closed-form pi, one evaluation of the W fixed-point map.
#
# For s_h = 1 the map's ingredients reduce (with P_d = 1 - N_d) to
#   D_dh(s) = 1 / ((1 - W_dh) N_d(s)),   C_dh(s) = P_d / ((1 - W_dh)^2 N_d(s))
# so W_dh <- 1 + (1 - W_dh) * num_dh / den_dh with
#   num_dh = sum_n (y_nd - 1) < s_h / N_d(s) >,  den_dh = sum_n < s_h P_d / N_d(s) >.
# ---------------------------------------------------------------------------


def new_stats(d: int, h: int, masked: bool) -> dict:
    return {
        "masked": masked,
        "n": 0,
        "sum_s": np.zeros(h),
        "num": np.zeros((d, h)),
        "den": np.zeros((d, h)),
    }


def accumulate_stats(stats, Y, mask, states, weights, params: NoisyOrParams):
    s = np.asarray(states, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b, nset, h = s.shape
    stats["n"] += b
    stats["sum_s"] += np.einsum("bs,bsh->h", w, s)

    log_prod = (s.reshape(b * nset, h) @ np.log1p(-params.W).T).reshape(b, nset, -1)
    n_on = -np.expm1(log_prod)  # N_d(s), (B, S, D)
    nonzero = s.sum(axis=2) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(nonzero[:, :, None], 1.0 / n_on, 0.0)
    q = np.exp(log_prod)
    q *= r  # (1 - N_d) / N_d
    ydiff = (Y - 1.0)[:, None, :]
    if mask is not None:
        mf = mask.astype(np.float64)[:, None, :]
        r = r * mf
        q *= mf
    wr = w[:, :, None] * r
    num_terms = wr * ydiff
    sf = s.reshape(b * nset, h)
    stats["num"] += num_terms.reshape(b * nset, -1).T @ sf
    q *= w[:, :, None]
    stats["den"] += q.reshape(b * nset, -1).T @ sf


def finalize_m_step(stats, params: NoisyOrParams, pi_floor: float | None = None) -> NoisyOrParams:
    pi = np.clip(stats["sum_s"] / stats["n"], PI_CLAMP, 1 - PI_CLAMP)
    if pi_floor is not None:
        pi = np.maximum(pi, pi_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        W = 1.0 + (1.0 - params.W) * stats["num"] / stats["den"]
    # Entries without any posterior mass on s_h = 1 carry no information.
    W = np.where(stats["den"] > 0, W, params.W)
    W = np.clip(W, EPS_W, 1.0 - EPS_W)
    return NoisyOrParams(pi=pi, W=W)


def m_step(
    data: DataSet,
    states: np.ndarray,
    set_lpj: np.ndarray,
    params: NoisyOrParams,
    pi_floor: float | None = None,
) -> NoisyOrParams:
    stats = new_stats(params.d, params.h, data.mask is not None)
    weights = posterior_weights(set_lpj)
    block = max(1, (1 << 22) // max(1, params.d * max(1, states.shape[1])))
    for a in range(0, data.n, block):
        z = slice(a, a + block)
        m = None if data.mask is None else data.mask[z]
        accumulate_stats(stats, data.Y[z], m, states[z], weights[z], params)
    return finalize_m_step(stats, params, pi_floor=pi_floor)
