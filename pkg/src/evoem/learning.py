"""The outer EM loop: initialization recipes, E-step (evolve offspring and
keep the best states), M-step, free-energy tracking and checkpoint hooks.

Work is partitioned into fixed-size blocks of datapoints. Block boundaries
and per-block random streams depend only on the run configuration (never on
the worker count), and reductions run in block order, so results are
byte-identical for any parallel degree.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bitpack import int_to_bits, lexsort_rows, pack_states
from .datasets import DataSet
from .errors import EvoEmError
from .evolution import EaConfig, evolve
from .mathutil import logsumexp, posterior_weights
from .models import get_model, normalize_kind
from .models.bsc import SIGMA2_FLOOR, BscParams
from .models.noisyor import EPS_W, NoisyOrParams
from .models.sssc import SsscParams, frozen_params
from .variational import StateSetCollection, update_sets_batch

_PURPOSE_INIT_PARAMS = 0
_PURPOSE_INIT_SETS = 1
_PURPOSE_EVOLVE = 2


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic stream for (master seed, purpose, iteration, block...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class EemConfig:
    s: int
    iterations: int
    seed: int = 0
    parallel_degree: int = 1
    log_every: int = 1
    early_stop_tol: float | None = None
    early_stop_patience: int = 10

    def __post_init__(self):
        if self.s < 1:
            raise EvoEmError("set size S must be >= 1")
        if self.iterations < 1:
            raise EvoEmError("need at least one EM iteration")
        if self.parallel_degree < 1:
            raise EvoEmError("parallel degree must be >= 1")


@dataclass
class FreeEnergyTrace:
    iterations: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)  # F/N per logged iteration

    def append(self, iteration: int, f_per_n: float):
        if self.iterations and iteration <= self.iterations[-1]:
            raise EvoEmError("trace iterations must be strictly increasing")
        self.iterations.append(iteration)
        self.values.append(f_per_n)

    def as_rows(self):
        return list(zip(self.iterations, self.values))


@dataclass
class FitResult:
    params: object
    sets: StateSetCollection
    trace: FreeEnergyTrace
    diagnostics: list[dict]


def init_params(kind: str, data: DataSet, h: int, rng: np.random.Generator, frozen_mu_psi: bool = False):
    """Data-driven initialization.

    noisy-OR: pi = 1/H, W uniform on [0,1] (clamped). BSC/SSSC: sigma2 is the
    data variance averaged over observed dimensions, dictionary columns are
    the data mean plus Gaussian noise of std 0.25 sigma_init. SSSC draws
    pi uniformly from [0.1, 0.5] and mu from [1, 5], with Psi = I.
    """
    kind = normalize_kind(kind)
    if data.n == 0:
        raise EvoEmError("cannot initialize from an empty dataset")
    d = data.d
    if kind == "nor":
        data.require_binary()
        pi = np.full(h, 1.0 / h)
        W = np.clip(rng.random((d, h)), EPS_W, 1.0 - EPS_W)
        return NoisyOrParams(pi=pi, W=W)

    if data.mask is None:
        mean = data.Y.mean(axis=0)
        sigma2 = float(data.Y.var(axis=0).mean())
    else:
        m = data.mask.astype(np.float64)
        cnt = m.sum(axis=0)
        covered = cnt > 0
        mean = np.zeros(d)
        mean[covered] = (m * data.Y).sum(axis=0)[covered] / cnt[covered]
        if covered.any() and not covered.all():
            mean[~covered] = mean[covered].mean()
        var = ((m * (data.Y - mean) ** 2).sum(axis=0)[covered] / cnt[covered])
        sigma2 = float(var.mean()) if covered.any() else 0.0
    sigma2 = max(sigma2, SIGMA2_FLOOR)
    W = mean[:, None] + 0.25 * np.sqrt(sigma2) * rng.standard_normal((d, h))

    if kind == "bsc":
        return BscParams(pi=min(max(1.0 / h, 1e-5), 1 - 1e-5), sigma2=sigma2, W=W)
    if frozen_mu_psi:
        pi = rng.uniform(0.1, 0.5, size=h)
        return frozen_params(pi=pi, sigma2=sigma2, W=W)
    pi = rng.uniform(0.1, 0.5, size=h)
    mu = rng.uniform(1.0, 5.0, size=h)
    return SsscParams(pi=pi, sigma2=sigma2, W=W, mu=mu, Psi=np.eye(h))


def init_state_sets(n: int, h: int, s_size: int, sparsity: float, rng: np.random.Generator,
                    max_resample_rounds: int = 60) -> np.ndarray:
    """Populate N sets with S unique states from a sparse Bernoulli prior.

    Collisions are re-sampled a bounded number of rounds; leftovers are
    filled from the lexicographic state enumeration, so exhaustive sets
    (S = 2^H) terminate deterministically.
    """
    if h < 63 and s_size > (1 << h):
        raise EvoEmError(f"cannot fill {s_size} unique states from a space of {1 << h}")
    states = (rng.random((n, s_size, h)) < sparsity).astype(np.uint8)
    for _ in range(max_resample_rounds):
        dup_rows, dup_slots = _duplicate_slots(states)
        if dup_rows.size == 0:
            return states
        states[dup_rows, dup_slots] = (rng.random((dup_rows.size, h)) < sparsity).astype(np.uint8)
    dup_rows, dup_slots = _duplicate_slots(states)
    for row in np.unique(dup_rows):
        slots = dup_slots[dup_rows == row]
        keys = {tuple(k) for k in pack_states(states[row]).tolist()}
        value = 0
        for slot in slots:
            while True:
                bits = int_to_bits(value, h)
                value += 1
                key = tuple(pack_states(bits).tolist())
                if key not in keys:
                    keys.add(key)
                    states[row, slot] = bits
                    break
    return states


def _duplicate_slots(states: np.ndarray):
    """Indices (rows, slots) of states duplicating an earlier slot in the row."""
    keys = pack_states(states)
    order = lexsort_rows(keys)
    sorted_keys = np.take_along_axis(keys, order[:, :, None], axis=1)
    dup_sorted = np.zeros(order.shape, dtype=bool)
    dup_sorted[:, 1:] = np.all(sorted_keys[:, 1:] == sorted_keys[:, :-1], axis=2)
    rows, pos = np.nonzero(dup_sorted)
    return rows, order[rows, pos]


def _block_size(n: int, d: int, h: int, s_size: int, ea: EaConfig) -> int:
    per_point = max(d, h) * max(s_size + ea.children_per_generation * ea.n_generations, 1)
    return max(32, min(n, (1 << 24) // max(1, per_point)))


def _block_spans(n: int, block: int):
    return [(a, min(a + block, n)) for a in range(0, n, block)]


def _run_blocks(spans, fn, workers: int):
    """Evaluate fn(block_index, span) for all blocks; ordered result list."""
    if workers <= 1 or len(spans) <= 1:
        return [fn(i, span) for i, span in enumerate(spans)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(spans)), spans))


def _reduce_stats(parts: list[dict]) -> dict:
    total = parts[0]
    for part in parts[1:]:
        for key, val in part.items():
            if isinstance(val, np.ndarray):
                total[key] += val
            elif isinstance(val, (int, float)) and not isinstance(val, bool):
                total[key] += val
    return total


def eem_fit(
    data: DataSet,
    kind: str,
    h: int,
    eem: EemConfig,
    ea: EaConfig,
    m_step_options: dict | None = None,
    callback=None,
    initial: tuple | None = None,
) -> FitResult:
    """Run the full variational loop and return final parameters, state sets
    and the free-energy trace.

    initial resumes from (params, sets, start_iteration, trace); randomness
    is keyed by (seed, iteration), so a resumed run continues the exact
    stream of an uninterrupted one.
    """
    kind = normalize_kind(kind)
    model = get_model(kind)
    opts = dict(m_step_options or {})
    n = data.n

    if initial is not None:
        params, sets, start_iteration, trace = initial
        trace = trace or FreeEnergyTrace()
    else:
        params = init_params(
            kind, data, h, derive_rng(eem.seed, _PURPOSE_INIT_PARAMS),
            frozen_mu_psi=bool(opts.pop("frozen_mu_psi", False)),
        )
        states = init_state_sets(
            n, h, eem.s, 1.0 / h, derive_rng(eem.seed, _PURPOSE_INIT_SETS)
        )
        sets = StateSetCollection(states)
        start_iteration = 0
        trace = FreeEnergyTrace()
    opts.pop("frozen_mu_psi", None)

    block = _block_size(n, data.d, h, eem.s, ea)
    spans = _block_spans(n, block)
    workers = eem.parallel_degree
    diagnostics: list[dict] = []

    def lpj_refresh(span):
        a, b = span
        m = None if data.mask is None else data.mask[a:b]
        sets.lpj[a:b] = model.lpj(sets.states[a:b], data.Y[a:b], m, params)
        return logsumexp(sets.lpj[a:b], axis=1).sum()

    # Cache lpj under the entry parameters (recomputed on resume as well,
    # which reproduces the uninterrupted stream exactly).
    _run_blocks(spans, lambda i, span: lpj_refresh(span), workers)

    flat_streak = 0
    prev_f = None
    for t in range(start_iteration + 1, eem.iterations + 1):
        try:
            s_tilde = model.model_sparsity(params)

            def estep(bi, span):
                a, b = span
                m = None if data.mask is None else data.mask[a:b]
                rng = derive_rng(eem.seed, _PURPOSE_EVOLVE, t, bi)
                cand, cand_lpj = evolve(
                    sets.states[a:b], sets.lpj[a:b], ea,
                    lambda c: model.lpj(c, data.Y[a:b], m, params),
                    s_tilde, rng,
                )
                lse_pre = logsumexp(sets.lpj[a:b], axis=1)
                sets.states[a:b], sets.lpj[a:b] = update_sets_batch(
                    sets.states[a:b], sets.lpj[a:b], cand, cand_lpj
                )
                lse_post = logsumexp(sets.lpj[a:b], axis=1)
                if kind == "sssc":
                    stats = model.new_stats(data.d, h, data.mask is not None,
                                            opts.get("sigma2_update", "printed"))
                else:
                    stats = model.new_stats(data.d, h, data.mask is not None)
                weights = posterior_weights(sets.lpj[a:b], axis=1)
                model.accumulate_stats(stats, data.Y[a:b], m, sets.states[a:b], weights, params)
                return float((lse_post - lse_pre).min()), stats

            results = _run_blocks(spans, estep, workers)
            estep_min_gain = min(r[0] for r in results)
            stats = _reduce_stats([r[1] for r in results])

            if kind == "nor":
                params = model.finalize_m_step(stats, params, pi_floor=opts.get("pi_floor"))
            else:
                params = model.finalize_m_step(stats, params)

            if kind == "sssc" and not params.mu_psi_frozen:
                if np.abs(params.mu).max() > 1e6 or params.Psi.diagonal().max() > 1e6:
                    warnings.warn(
                        "slab mean/covariance exploded; freezing mu = 1, Psi = I",
                        RuntimeWarning,
                    )
                    params = frozen_params(pi=params.pi, sigma2=params.sigma2, W=params.W)

            lse_sums = _run_blocks(spans, lambda i, span: lpj_refresh(span), workers)
            const_all = model.log_constant(params, data.observed_counts())
            f_total = float(sum(lse_sums) + np.sum(const_all))
        except EvoEmError as exc:
            raise type(exc)(f"EM iteration {t}: {exc}") from exc

        f_per_n = f_total / n
        diagnostics.append(
            {"iteration": t, "f_per_n": f_per_n, "estep_min_gain": estep_min_gain}
        )
        if t % eem.log_every == 0 or t == eem.iterations:
            trace.append(t, f_per_n)
        if callback is not None:
            callback(iteration=t, params=params, sets=sets, f_per_n=f_per_n)

        if eem.early_stop_tol is not None and prev_f is not None:
            if abs(f_per_n - prev_f) < eem.early_stop_tol:
                flat_streak += 1
                if flat_streak >= eem.early_stop_patience:
                    break
            else:
                flat_streak = 0
        prev_f = f_per_n

    return FitResult(params=params, sets=sets, trace=trace, diagnostics=diagnostics)
