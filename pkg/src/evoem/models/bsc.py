"""Binary sparse coding: Bernoulli latents, linear Gaussian observables.

Generative process: s_h ~ Bern(pi) i.i.d., y ~ N(W s, sigma2 I).

The log-pseudo-joint keeps only the state-dependent part of the log-joint:

    lpj(s, y) = log(pi/(1-pi)) * |s| - ||y - W s||^2 / (2 sigma2)
    C(theta)  = H log(1-pi) - (D/2) log(2 pi sigma2)

With an observation mask, sums over d run over observed entries only and D
in C(theta) becomes the per-datapoint observed count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bitpack import unique_rows
from ..datasets import DataSet
from ..mathutil import posterior_weights

SIGMA2_FLOOR = 1e-9
PI_CLAMP = 1e-5
GRAM_RIDGE = 1e-9


@dataclass
class BscParams:
    pi: float
    sigma2: float
    W: np.ndarray  # (D, H)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.pi = float(self.pi)
        self.sigma2 = float(self.sigma2)
        if self.W.ndim != 2:
            raise ValueError("W must be a D x H matrix")
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {self.pi}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def h(self) -> int:
        return self.W.shape[1]


def model_sparsity(params: BscParams) -> float:
    return params.h * params.pi


def log_constant(params: BscParams, d_obs) -> np.ndarray | float:
    d_obs = np.asarray(d_obs, dtype=np.float64)
    out = params.h * np.log1p(-params.pi) - 0.5 * d_obs * np.log(
        2.0 * np.pi * params.sigma2
    )
    return out if out.ndim else float(out)


def _use_unique_route(h: int, n: int) -> bool:
    return h <= 20 and (1 << h) * n <= (1 << 24)


def _lpj_unique(states, Y, mask, params: BscParams):
    """Dedup states across the block; the quadratic expands into per-unique
    and per-datapoint pieces glued by one (U, B) cross GEMM."""
    b, k, h = states.shape
    flat = states.reshape(b * k, h)
    ubits, inv = unique_rows(flat)
    uf = ubits.astype(np.float64)
    means = uf @ params.W.T  # (U, D)
    n_idx = np.repeat(np.arange(b), k)
    if mask is None:
        ynorm2 = np.einsum("bd,bd->b", Y, Y)
        cross = means @ Y.T  # (U, B)
        snorm2 = np.einsum("ud,ud->u", means, means)
        quad = ynorm2[n_idx] - 2.0 * cross[inv, n_idx] + snorm2[inv]
    else:
        mf = mask.astype(np.float64)
        ym = mf * Y
        ynorm2 = np.einsum("bd,bd->b", ym, Y)
        cross = means @ ym.T
        snorm2 = (means * means) @ mf.T  # (U, B)
        quad = ynorm2[n_idx] - 2.0 * cross[inv, n_idx] + snorm2[inv, n_idx]
    coef = np.log(params.pi / (1.0 - params.pi))
    out = coef * ubits.sum(axis=1)[inv] - 0.5 / params.sigma2 * quad
    return out.reshape(b, k)


def lpj(states: np.ndarray, Y: np.ndarray, mask, params: BscParams) -> np.ndarray:
    """Batched log-pseudo-joints.

    states: (..., K, H) in {0,1}; Y: (..., D); mask: (..., D) bool or None.
    Returns (..., K).
    """
    s = np.asarray(states, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if s.shape[-1] != params.h or Y.shape[-1] != params.d:
        raise ValueError("state/data dimensions do not match the parameters")
    if s.ndim == 3 and _use_unique_route(params.h, s.shape[0]):
        return _lpj_unique(
            np.ascontiguousarray(states, dtype=np.uint8), Y, mask, params
        )
    # One large GEMM instead of a batched loop over small ones.
    mean = (s.reshape(-1, params.h) @ params.W.T).reshape(s.shape[:-1] + (params.d,))
    resid = Y[..., None, :] - mean
    if mask is not None:
        resid *= mask[..., None, :]
    quad = np.einsum("...kd,...kd->...k", resid, resid)
    coef = np.log(params.pi / (1.0 - params.pi))
    return coef * s.sum(axis=-1) - 0.5 / params.sigma2 * quad


def log_pseudo_joint(state, y, mask, params: BscParams) -> float:
    s = np.asarray(state, dtype=np.uint8)[None, :]
    y = np.asarray(y, dtype=np.float64)[None, :]
    m = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
    return float(lpj(s[None], y, m, params)[0, 0])


def sample(params: BscParams, n: int, rng: np.random.Generator):
    s = (rng.random((n, params.h)) < params.pi).astype(np.uint8)
    noise = rng.standard_normal((n, params.d))
    Y = s.astype(np.float64) @ params.W.T + np.sqrt(params.sigma2) * noise
    return DataSet(Y), {"s": s}


# ---------------------------------------------------------------------------
# M-step. Expectations are streamed block-wise so memory stays independent
# of N; the closed-form update is applied in finalize_m_step.
# ---------------------------------------------------------------------------


def new_stats(d: int, h: int, masked: bool) -> dict:
    stats = {
        "masked": masked,
        "n": 0,
        "n_obs": 0.0,
        "sum_s": np.zeros(h),
        "sum_y_sT": np.zeros((d, h)),
        "sum_y2": 0.0,
    }
    if masked:
        stats["gram"] = np.zeros((d, h, h))
    else:
        stats["gram"] = np.zeros((h, h))
    return stats


def accumulate_stats(stats, Y, mask, states, weights, params: BscParams):
    s = np.asarray(states, dtype=np.float64)  # (B, S, H)
    w = np.asarray(weights, dtype=np.float64)  # (B, S)
    b, nset, h = s.shape
    es = np.einsum("bs,bsh->bh", w, s)  # <s> per datapoint
    ws = (w[:, :, None] * s).reshape(b * nset, h)
    sf = s.reshape(b * nset, h)
    stats["n"] += b
    stats["sum_s"] += es.sum(axis=0)
    if mask is None:
        stats["n_obs"] += b * Y.shape[1]
        stats["sum_y_sT"] += Y.T @ es
        stats["gram"] += ws.T @ sf
        stats["sum_y2"] += float(np.einsum("bd,bd->", Y, Y))
    else:
        m = mask.astype(np.float64)
        stats["n_obs"] += float(m.sum())
        stats["sum_y_sT"] += (m * Y).T @ es
        e2 = np.einsum("bs,bsh,bsg->bhg", w, s, s)
        stats["gram"] += np.einsum("bd,bhg->dhg", m, e2)
        stats["sum_y2"] += float(np.einsum("bd,bd->", m * Y, Y))


def finalize_m_step(stats, params: BscParams) -> BscParams:
    h = params.h
    pi = float(np.clip(stats["sum_s"].sum() / (stats["n"] * h), PI_CLAMP, 1 - PI_CLAMP))
    A = stats["sum_y_sT"]
    if stats["masked"]:
        gram = stats["gram"].copy()  # (D, H, H)
        ridge = GRAM_RIDGE * np.trace(gram, axis1=1, axis2=2) / h
        gram += ridge[:, None, None] * np.eye(h)
        W = np.linalg.solve(gram, A[:, :, None])[:, :, 0]
        quad = np.einsum("dh,dhg,dg->", W, stats["gram"], W)
    else:
        gram = stats["gram"] + (GRAM_RIDGE * np.trace(stats["gram"]) / h) * np.eye(h)
        W = np.linalg.solve(gram, A.T).T
        quad = float(np.sum((W.T @ W) * stats["gram"]))
    total = stats["sum_y2"] - 2.0 * float(np.sum(W * A)) + quad
    sigma2 = max(total / stats["n_obs"], SIGMA2_FLOOR)
    return BscParams(pi=pi, sigma2=sigma2, W=W)


def m_step(data: DataSet, states: np.ndarray, set_lpj: np.ndarray, params: BscParams) -> BscParams:
    """One full update from cached K-sets: states (N,S,H), set_lpj (N,S)."""
    stats = new_stats(params.d, params.h, data.mask is not None)
    weights = posterior_weights(set_lpj)
    block = max(1, (1 << 22) // max(1, params.h * params.h))
    for a in range(0, data.n, block):
        z = slice(a, a + block)
        m = None if data.mask is None else data.mask[z]
        accumulate_stats(stats, data.Y[z], m, states[z], weights[z], params)
    return finalize_m_step(stats, params)
