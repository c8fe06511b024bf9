"""Spike-and-slab sparse coding: binary spikes times Gaussian slabs.

Generative process: s_h ~ Bern(pi_h), z ~ N(mu, Psi), y ~ N(W (s*z), sigma2 I).
Marginalizing the slab gives a tractable joint per binary state,

    p(s, y) = Bern(s; pi) N(y; Wtil_s mu, C_s),   C_s = sigma2 I + Wtil_s Psi Wtil_s^T,

where Wtil_s zeroes the columns of W at inactive units. All linear algebra
runs on the |s|-dimensional active subspace via the matrix inversion and
determinant lemmas, so C_s (D x D) is never formed:

    Lam_s   = (sigma2^-1 Wa^T Wa + Psi_a^-1)^-1          (active block)
    kappa_s = mu_a + sigma2^-1 Lam_s Wa^T (y - Wa mu_a)  (posterior slab mean)
    log|C_s| = D log sigma2 + log|Psi_a| - log|Lam_s|
    quad     = ||y - Wa mu_a||^2 / sigma2 - t^T Lam_s t / sigma2^2,  t = Wa^T (y - Wa mu_a)

With an observation mask the rows of Wa and y are restricted to the observed
dimensions and D becomes the per-datapoint observed count.

Log-pseudo-joint and constant:

    lpj(s, y) = sum_h s_h log(pi_h/(1-pi_h)) - log|C_s|/2 - quad/2
    C(theta)  = sum_h log(1-pi_h) - (D/2) log(2 pi)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bitpack import unique_rows
from ..datasets import DataSet
from ..errors import ParameterBlowupError
from ..mathutil import posterior_weights

SIGMA2_FLOOR = 1e-9
PI_CLAMP = 1e-5
GRAM_RIDGE = 1e-9
_TINY = 1e-12
_PAIR_CHUNK = 1 << 22  # elements per temporary in pairwise kernels


@dataclass
class SsscParams:
    pi: np.ndarray  # (H,)
    sigma2: float
    W: np.ndarray  # (D, H)
    mu: np.ndarray  # (H,)
    Psi: np.ndarray  # (H, H)
    mu_psi_frozen: bool = field(default=False)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.Psi = np.asarray(self.Psi, dtype=np.float64)
        self.sigma2 = float(self.sigma2)
        h = self.pi.shape[0]
        if self.W.ndim != 2 or self.W.shape[1] != h:
            raise ValueError("W must have shape (D, H)")
        if self.mu.shape != (h,) or self.Psi.shape != (h, h):
            raise ValueError("mu must have shape (H,), Psi shape (H, H)")
        if not ((self.pi > 0) & (self.pi < 1)).all():
            raise ValueError("all pi_h must lie in (0, 1)")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not np.allclose(self.Psi, self.Psi.T, rtol=1e-10, atol=1e-12):
            raise ValueError("Psi must be symmetric")
        if self.mu_psi_frozen:
            if not (np.all(self.mu == 1.0) and np.array_equal(self.Psi, np.eye(h))):
                raise ValueError("frozen variant requires mu = 1 and Psi = I")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def h(self) -> int:
        return self.pi.shape[0]


def frozen_params(pi, sigma2, W) -> SsscParams:
    h = np.asarray(pi).shape[0]
    return SsscParams(
        pi=pi, sigma2=sigma2, W=W, mu=np.ones(h), Psi=np.eye(h), mu_psi_frozen=True
    )


def model_sparsity(params: SsscParams) -> float:
    return float(params.pi.sum())


def log_constant(params: SsscParams, d_obs) -> np.ndarray | float:
    d_obs = np.asarray(d_obs, dtype=np.float64)
    out = np.log1p(-params.pi).sum() - 0.5 * d_obs * np.log(2.0 * np.pi)
    return out if out.ndim else float(out)


def _active_indices(bits: np.ndarray, k: int) -> np.ndarray:
    """(n, H) 0/1 rows with exactly k ones -> (n, k) ascending active indices."""
    order = np.argsort(-bits.astype(np.int8), axis=1, kind="stable")
    return order[:, :k]


def _batched_inv_logdet(mats: np.ndarray, what: str):
    try:
        inv = np.linalg.inv(mats)
        sign, logdet = np.linalg.slogdet(mats)
    except np.linalg.LinAlgError as exc:
        raise ParameterBlowupError(f"{what} is singular") from exc
    if not (sign > 0).all():
        raise ParameterBlowupError(f"{what} is not positive definite")
    return inv, logdet


def _gather_block(mat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """mat (H, H), idx (..., k) -> (..., k, k) principal sub-blocks."""
    return mat[idx[..., :, None], idx[..., None, :]]


# ---------------------------------------------------------------------------
# Batched evaluation. The unmasked route deduplicates states across the
# block and factors all data-independent quantities per unique state; the
# masked route works per (datapoint, state) pair because each datapoint
# restricts W to its own observed rows.
# ---------------------------------------------------------------------------


def _eval_unmasked(states, Y, params: SsscParams, want_kappa, want_lambda):
    b, kk, h = states.shape
    d = params.d
    s2 = params.sigma2
    flat = np.ascontiguousarray(states.reshape(b * kk, h), dtype=np.uint8)
    n_idx = np.repeat(np.arange(b), kk)

    ubits, inv = unique_rows(flat)
    n_uniq = ubits.shape[0]
    k_uniq = ubits.sum(axis=1).astype(np.int64)

    WtW = params.W.T @ params.W
    WtY = Y @ params.W  # (B, H)
    ynorm2 = np.einsum("bd,bd->b", Y, Y)
    logit = np.log(params.pi / (1.0 - params.pi))
    prior_u = ubits.astype(np.float64) @ logit
    d_log = d * np.log(s2)

    lpj_flat = np.empty(b * kk)
    kappa_flat = np.zeros((b * kk, h)) if want_kappa else None
    lam_groups = [] if want_lambda else None
    k_pair = k_uniq[inv]
    loc = np.empty(n_uniq, dtype=np.int64)

    for k in np.unique(k_uniq):
        usel = np.nonzero(k_uniq == k)[0]
        psel = np.nonzero(k_pair == k)[0]
        if k == 0:
            lpj_flat[psel] = prior_u[usel[0]] - 0.5 * (d_log + ynorm2[n_idx[psel]] / s2)
            continue
        idx_u = _active_indices(ubits[usel], int(k))
        mu_act = params.mu[idx_u]
        wtw_act = _gather_block(WtW, idx_u)
        if params.mu_psi_frozen:
            psi_inv = np.broadcast_to(np.eye(k), wtw_act.shape)
            logdet_psi = np.zeros(len(usel))
        else:
            psi_inv, logdet_psi = _batched_inv_logdet(
                _gather_block(params.Psi, idx_u), "slab covariance sub-block"
            )
        lam, neg = _batched_inv_logdet(wtw_act / s2 + psi_inv, "posterior precision")
        logdet_c = d_log + logdet_psi + neg
        v = np.einsum("uij,uj->ui", wtw_act, mu_act)
        wmu2 = np.einsum("ui,ui->u", v, mu_act)
        loc[usel] = np.arange(len(usel))

        chunk = max(1, _PAIR_CHUNK // max(1, int(k) * int(k)))
        for c0 in range(0, len(psel), chunk):
            pc = psel[c0 : c0 + chunk]
            g = loc[inv[pc]]
            nn = n_idx[pc]
            t0 = WtY[nn[:, None], idx_u[g]]  # (P, k)
            t = t0 - v[g]
            rnorm2 = ynorm2[nn] - 2.0 * np.einsum("pi,pi->p", t0, mu_act[g]) + wmu2[g]
            tlt = np.einsum("pi,pij,pj->p", t, lam[g], t)
            quad = rnorm2 / s2 - tlt / (s2 * s2)
            lpj_flat[pc] = prior_u[usel][g] - 0.5 * (logdet_c[g] + quad)
            if want_kappa:
                kap = mu_act[g] + np.einsum("pij,pj->pi", lam[g], t) / s2
                kappa_flat[pc[:, None], idx_u[g]] = kap
            if want_lambda:
                lam_groups.append((pc, idx_u[g], lam[g]))

    kappa = kappa_flat.reshape(b, kk, h) if want_kappa else None
    return lpj_flat.reshape(b, kk), kappa, lam_groups


def _eval_masked(states, Y, mask, params: SsscParams, want_kappa, want_lambda):
    b, kk, h = states.shape
    s2 = params.sigma2
    flat = np.ascontiguousarray(states.reshape(b * kk, h), dtype=np.uint8)
    n_idx = np.repeat(np.arange(b), kk)
    k_pair = flat.sum(axis=1).astype(np.int64)

    Wt = np.ascontiguousarray(params.W.T)  # (H, D)
    d_obs = mask.sum(axis=1).astype(np.float64)
    ym_masked = np.where(mask, Y, 0.0)
    ynorm2 = np.einsum("bd,bd->b", ym_masked, Y)
    logit = np.log(params.pi / (1.0 - params.pi))
    prior_flat = flat.astype(np.float64) @ logit

    lpj_flat = np.empty(b * kk)
    kappa_flat = np.zeros((b * kk, h)) if want_kappa else None
    lam_groups = [] if want_lambda else None

    for k in np.unique(k_pair):
        psel = np.nonzero(k_pair == k)[0]
        if k == 0:
            lpj_flat[psel] = prior_flat[psel] - 0.5 * (
                d_obs[n_idx[psel]] * np.log(s2) + ynorm2[n_idx[psel]] / s2
            )
            continue
        chunk = max(1, _PAIR_CHUNK // max(1, int(k) * params.d))
        idx_all = _active_indices(flat[psel], int(k))
        for c0 in range(0, len(psel), chunk):
            pc = psel[c0 : c0 + chunk]
            idx = idx_all[c0 : c0 + chunk]
            nn = n_idx[pc]
            wsub = Wt[idx]  # (P, k, D)
            m = mask[nn]
            wm = np.where(m[:, None, :], wsub, 0.0)
            gram = np.einsum("pid,pjd->pij", wm, wsub)
            if params.mu_psi_frozen:
                psi_inv = np.broadcast_to(np.eye(int(k)), gram.shape)
                logdet_psi = np.zeros(len(pc))
            else:
                psi_inv, logdet_psi = _batched_inv_logdet(
                    _gather_block(params.Psi, idx), "slab covariance sub-block"
                )
            lam, neg = _batched_inv_logdet(gram / s2 + psi_inv, "posterior precision")
            mu_act = params.mu[idx]
            resid = np.where(m, Y[nn] - np.einsum("pid,pi->pd", wsub, mu_act), 0.0)
            rnorm2 = np.einsum("pd,pd->p", resid, resid)
            t = np.einsum("pid,pd->pi", wsub, resid)
            tlt = np.einsum("pi,pij,pj->p", t, lam, t)
            quad = rnorm2 / s2 - tlt / (s2 * s2)
            logdet_c = d_obs[nn] * np.log(s2) + logdet_psi + neg
            lpj_flat[pc] = prior_flat[pc] - 0.5 * (logdet_c + quad)
            if want_kappa:
                kap = mu_act + np.einsum("pij,pj->pi", lam, t) / s2
                kappa_flat[pc[:, None], idx] = kap
            if want_lambda:
                lam_groups.append((pc, idx, lam))

    kappa = kappa_flat.reshape(b, kk, h) if want_kappa else None
    return lpj_flat.reshape(b, kk), kappa, lam_groups


def eval_states(states, Y, mask, params: SsscParams, want_kappa=False, want_lambda=False):
    """lpj plus optional posterior slab statistics for a block of state sets.

    states (B, K, H), Y (B, D), mask (B, D) bool or None. Returns
    (lpj (B,K), kappa (B,K,H) or None, lam_groups or None) where lam_groups
    lists (flat pair indices, active indices (P,k), Lam (P,k,k)).
    """
    states = np.asarray(states, dtype=np.uint8)
    Y = np.asarray(Y, dtype=np.float64)
    if states.shape[-1] != params.h or Y.shape[-1] != params.d:
        raise ValueError("state/data dimensions do not match the parameters")
    if mask is None:
        return _eval_unmasked(states, Y, params, want_kappa, want_lambda)
    return _eval_masked(states, Y, np.asarray(mask, bool), params, want_kappa, want_lambda)


def lpj(states, Y, mask, params: SsscParams) -> np.ndarray:
    return eval_states(states, Y, mask, params)[0]


def sssc_active_inference(state, y, mask, params: SsscParams):
    """Posterior slab statistics of one state: (kappa, Lambda, log|C_s|, quad).

    kappa is embedded into H dimensions with zeros at inactive coordinates;
    Lambda lives on the active subspace (k x k).
    """
    s = np.asarray(state, dtype=bool)
    y = np.asarray(y, dtype=np.float64)
    idx = np.nonzero(s)[0]
    obs = slice(None) if mask is None else np.asarray(mask, bool)
    yv = y[obs]
    s2 = params.sigma2
    d_obs = yv.shape[0]
    kappa = np.zeros(params.h)
    if idx.size == 0:
        return kappa, np.zeros((0, 0)), d_obs * np.log(s2), float(yv @ yv) / s2
    wa = params.W[obs][:, idx]
    if params.mu_psi_frozen:
        psi_inv = np.eye(idx.size)
        logdet_psi = 0.0
    else:
        psi_act = params.Psi[np.ix_(idx, idx)]
        psi_inv, logdet_psi = _batched_inv_logdet(psi_act[None], "slab covariance sub-block")
        psi_inv, logdet_psi = psi_inv[0], float(logdet_psi[0])
    prec = wa.T @ wa / s2 + psi_inv
    lam, neg = _batched_inv_logdet(prec[None], "posterior precision")
    lam, neg = lam[0], float(neg[0])
    resid = yv - wa @ params.mu[idx]
    t = wa.T @ resid
    quad = float(resid @ resid) / s2 - float(t @ lam @ t) / (s2 * s2)
    logdet_c = d_obs * np.log(s2) + logdet_psi + neg
    kappa[idx] = params.mu[idx] + lam @ t / s2
    return kappa, lam, logdet_c, quad


def log_pseudo_joint(state, y, mask, params: SsscParams) -> float:
    s = np.asarray(state, dtype=np.uint8)[None, :]
    y = np.asarray(y, dtype=np.float64)[None, :]
    m = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
    return float(lpj(s[None], y, m, params)[0, 0])


def sample(params: SsscParams, n: int, rng: np.random.Generator):
    s = (rng.random((n, params.h)) < params.pi).astype(np.uint8)
    try:
        chol = np.linalg.cholesky(params.Psi)
    except np.linalg.LinAlgError as exc:
        raise ParameterBlowupError("slab covariance is not positive definite") from exc
    z = params.mu + rng.standard_normal((n, params.h)) @ chol.T
    mean = (s * z) @ params.W.T
    Y = mean + np.sqrt(params.sigma2) * rng.standard_normal((n, params.d))
    return DataSet(Y), {"s": s, "z": z}


# ---------------------------------------------------------------------------
# M-step. Expectations over the binary posterior use kappa and Lambda:
#   <s z>       = sum_s q(s) kappa_s
#   <sz sz^T>   = sum_s q(s) (Lambda_s + kappa_s kappa_s^T)
# Updates: W from (sum_n y <sz>^T, sum_n <szsz^T>); pi = mean <s>;
# mu = sum <sz> / sum <s>; Psi = (sum <szsz^T> - sum <ss^T> * mu mu^T)
# / sum <ss^T> elementwise; sigma2 from the configured variant.
# ---------------------------------------------------------------------------


def new_stats(d: int, h: int, masked: bool, sigma2_update: str = "printed") -> dict:
    if sigma2_update not in ("printed", "residual"):
        raise ValueError(f"unknown sigma2 update variant {sigma2_update!r}")
    stats = {
        "masked": masked,
        "sigma2_update": sigma2_update,
        "n": 0,
        "n_obs": 0.0,
        "sum_s": np.zeros(h),
        "sum_ssT": np.zeros((h, h)),
        "sum_sz": np.zeros(h),
        "sum_szszT": np.zeros((h, h)),
        "sum_y_szT": np.zeros((d, h)),
        "sum_y2": 0.0,
    }
    if masked:
        stats["gram"] = np.zeros((d, h, h))
        if sigma2_update == "printed":
            stats["szout"] = np.zeros((d, h, h))
    else:
        stats["szout"] = np.zeros((h, h))
    return stats


def accumulate_stats(stats, Y, mask, states, weights, params: SsscParams):
    s = np.asarray(states, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b, nset, h = s.shape
    _, kappa, lam_groups = eval_states(
        states, Y, mask, params, want_kappa=True, want_lambda=True
    )
    w_flat = w.reshape(b * nset)

    stats["n"] += b
    stats["sum_s"] += np.einsum("bs,bsh->h", w, s)
    ws = (w[:, :, None] * s).reshape(b * nset, h)
    stats["sum_ssT"] += ws.T @ s.reshape(b * nset, h)
    sz_mean = np.einsum("bs,bsh->bh", w, kappa)
    stats["sum_sz"] += sz_mean.sum(axis=0)

    if mask is None:
        stats["n_obs"] += b * Y.shape[1]
        stats["sum_y2"] += float(np.einsum("bd,bd->", Y, Y))
        stats["sum_y_szT"] += Y.T @ sz_mean
        wk = (w[:, :, None] * kappa).reshape(b * nset, h)
        stats["sum_szszT"] += wk.T @ kappa.reshape(b * nset, h)
        for pidx, idx, lam in lam_groups:
            contrib = w_flat[pidx][:, None, None] * lam
            np.add.at(stats["sum_szszT"], (idx[:, :, None], idx[:, None, :]), contrib)
        stats["szout"] += sz_mean.T @ sz_mean
    else:
        m = mask.astype(np.float64)
        stats["n_obs"] += float(m.sum())
        stats["sum_y2"] += float(np.einsum("bd,bd->", m * Y, Y))
        stats["sum_y_szT"] += (m * Y).T @ sz_mean
        e2 = np.einsum("bs,bsh,bsg->bhg", w, kappa, kappa)
        for pidx, idx, lam in lam_groups:
            contrib = w_flat[pidx][:, None, None] * lam
            np.add.at(e2, (pidx // nset, idx[:, :, None], idx[:, None, :]), contrib)
        stats["sum_szszT"] += e2.sum(axis=0)
        stats["gram"] += np.einsum("bd,bhg->dhg", m, e2)
        if stats["sigma2_update"] == "printed":
            stats["szout"] += np.einsum("bd,bh,bg->dhg", m, sz_mean, sz_mean)


def finalize_m_step(stats, params: SsscParams) -> SsscParams:
    h = params.h
    pi = np.clip(stats["sum_s"] / stats["n"], PI_CLAMP, 1 - PI_CLAMP)

    if params.mu_psi_frozen:
        mu, psi = params.mu, params.Psi
    else:
        active = stats["sum_s"] > _TINY
        mu = np.where(active, stats["sum_sz"] / np.where(active, stats["sum_s"], 1.0), params.mu)
        denom = stats["sum_ssT"]
        num = stats["sum_szszT"] - denom * np.outer(mu, mu)
        evidence = denom > _TINY
        psi = np.where(evidence, num / np.where(evidence, denom, 1.0), np.eye(h))
        psi = 0.5 * (psi + psi.T)
        # The elementwise update does not preserve definiteness (its
        # entries condition on different co-activation events); clip
        # eigenvalues only when violated so valid updates pass through.
        floor = 1e-6 * max(float(np.diagonal(psi).mean()), 1e-6)
        evals = np.linalg.eigvalsh(psi)
        if evals.min() < floor:
            evals, vecs = np.linalg.eigh(psi)
            psi = (vecs * np.maximum(evals, floor)) @ vecs.T
            psi = 0.5 * (psi + psi.T)

    A = stats["sum_y_szT"]
    if stats["masked"]:
        gram = stats["gram"].copy()
        ridge = GRAM_RIDGE * np.trace(gram, axis1=1, axis2=2) / h
        gram += ridge[:, None, None] * np.eye(h)
        W = np.linalg.solve(gram, A[:, :, None])[:, :, 0]
    else:
        gram = stats["sum_szszT"] + (GRAM_RIDGE * np.trace(stats["sum_szszT"]) / h) * np.eye(h)
        W = np.linalg.solve(gram, A.T).T

    if stats["sigma2_update"] == "printed":
        if stats["masked"]:
            quad = float(np.einsum("dh,dhg,dg->", W, stats["szout"], W))
        else:
            quad = float(np.einsum("dh,hg,dg->", W, stats["szout"], W))
        total = stats["sum_y2"] - quad
    else:
        if stats["masked"]:
            quad = float(np.einsum("dh,dhg,dg->", W, stats["gram"], W))
        else:
            quad = float(np.sum((W.T @ W) * stats["sum_szszT"]))
        total = stats["sum_y2"] - 2.0 * float(np.sum(W * A)) + quad
    sigma2 = max(total / stats["n_obs"], SIGMA2_FLOOR)

    return SsscParams(
        pi=pi, sigma2=sigma2, W=W, mu=mu, Psi=psi, mu_psi_frozen=params.mu_psi_frozen
    )


def m_step(
    data: DataSet,
    states: np.ndarray,
    set_lpj: np.ndarray,
    params: SsscParams,
    sigma2_update: str = "printed",
) -> SsscParams:
    stats = new_stats(params.d, params.h, data.mask is not None, sigma2_update)
    weights = posterior_weights(set_lpj)
    block = max(1, (1 << 22) // max(1, params.h * params.h))
    for a in range(0, data.n, block):
        z = slice(a, a + block)
        m = None if data.mask is None else data.mask[z]
        accumulate_stats(stats, data.Y[z], m, states[z], weights[z], params)
    return finalize_m_step(stats, params)
