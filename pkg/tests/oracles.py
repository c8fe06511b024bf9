"""Brute-force reference computations for small instances.

Everything here enumerates the full binary state space and evaluates model
densities directly from their generative definitions (dense linear algebra
for the spike-and-slab marginal), independent of the package's pseudo-joint
and active-subspace code paths.
"""

from __future__ import annotations

from itertools import product

import numpy as np


def all_states(h: int) -> np.ndarray:
    return np.array(list(product([0, 1], repeat=h)), dtype=np.uint8)


def log_joint_bsc(s, y, params, mask=None) -> float:
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    obs = slice(None) if mask is None else np.asarray(mask, bool)
    prior = np.sum(s * np.log(params.pi) + (1 - s) * np.log(1 - params.pi))
    resid = (y - params.W @ s)[obs]
    d_obs = resid.shape[0]
    return float(
        prior
        - 0.5 * d_obs * np.log(2 * np.pi * params.sigma2)
        - 0.5 * resid @ resid / params.sigma2
    )


def log_joint_nor(s, y, params, mask=None) -> float:
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    obs = slice(None) if mask is None else np.asarray(mask, bool)
    prior = np.sum(s * np.log(params.pi) + (1 - s) * np.log(1 - params.pi))
    on = 1.0 - np.prod(1.0 - params.W * s, axis=1)
    with np.errstate(divide="ignore"):
        ll = np.where(y == 1, np.log(on), np.log1p(-on))[obs]
    return float(prior + ll.sum())


def log_joint_sssc(s, y, params, mask=None) -> float:
    """Slab-marginalized joint via the dense D x D covariance."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    obs = slice(None) if mask is None else np.asarray(mask, bool)
    prior = np.sum(s * np.log(params.pi) + (1 - s) * np.log(1 - params.pi))
    wt = (params.W * s)[obs]
    yv = y[obs]
    d_obs = yv.shape[0]
    cov = params.sigma2 * np.eye(d_obs) + wt @ params.Psi @ wt.T
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    resid = yv - wt @ params.mu
    return float(
        prior
        - 0.5 * d_obs * np.log(2 * np.pi)
        - 0.5 * logdet
        - 0.5 * resid @ np.linalg.solve(cov, resid)
    )


def exact_posterior(log_joint_fn, y, params, mask=None):
    """(states, posterior weights, log marginal) by full enumeration."""
    states = all_states(params.h)
    lj = np.array([log_joint_fn(s, y, params, mask) for s in states])
    m = lj.max()
    w = np.exp(lj - m)
    z = w.sum()
    return states, w / z, float(np.log(z) + m)


def sssc_slab_stats(s, y, params, mask=None):
    """Posterior slab mean (embedded) and covariance (active block, dense)."""
    s = np.asarray(s, bool)
    idx = np.nonzero(s)[0]
    h = params.h
    kappa = np.zeros(h)
    lam = np.zeros((h, h))
    if idx.size == 0:
        return kappa, lam
    obs = slice(None) if mask is None else np.asarray(mask, bool)
    wa = params.W[obs][:, idx]
    psi_a = params.Psi[np.ix_(idx, idx)]
    prec = wa.T @ wa / params.sigma2 + np.linalg.inv(psi_a)
    lam_a = np.linalg.inv(prec)
    kappa[idx] = params.mu[idx] + lam_a @ wa.T @ (
        np.asarray(y, dtype=np.float64)[obs] - wa @ params.mu[idx]
    ) / params.sigma2
    lam[np.ix_(idx, idx)] = lam_a
    return kappa, lam
