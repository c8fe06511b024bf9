"""Generative models: noisy-OR Bayes nets, binary sparse coding (BSC) and
spike-and-slab sparse coding (SSSC).

Each model module exposes the same function surface:

    log_constant(params, d_obs)        state-independent part of the log-joint
    log_pseudo_joint(state, y, mask, params)      single-state evaluation
    lpj(states, Y, mask, params)       batched evaluation, shapes (B,K,H)/(B,D)
    sample(params, n, rng)             draw a DataSet plus generating latents
    m_step(data, states, lpj, params, **opts)     full parameter update
    new_stats / accumulate_stats / finalize_m_step    streaming M-step pieces
    model_sparsity(params)             expected number of active units
"""

from __future__ import annotations

from . import bsc, noisyor, sssc

_ALIASES = {
    "nor": "nor",
    "noisyor": "nor",
    "noisy-or": "nor",
    "bsc": "bsc",
    "ebsc": "bsc",
    "sssc": "sssc",
    "es3c": "sssc",
}

_MODULES = {"nor": noisyor, "bsc": bsc, "sssc": sssc}


def normalize_kind(kind: str) -> str:
    try:
        return _ALIASES[kind.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


def get_model(kind: str):
    return _MODULES[normalize_kind(kind)]


def kind_of(params) -> str:
    return {
        noisyor.NoisyOrParams: "nor",
        bsc.BscParams: "bsc",
        sssc.SsscParams: "sssc",
    }[type(params)]
