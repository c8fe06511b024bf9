"""Genetic operators that propose new latent states.

Offspring generation per population: select N_p parents (fitness
proportional or uniform, both without replacement), optionally recombine
them by single-point crossover into N_p(N_p-1) children (otherwise copy
each parent N_m times), then mutate every child, either with exactly one
uniform bitflip or with sparsity-driven per-bit flips. Repeated for N_g
generations, each selecting from the previous generation's offspring.

Fitness is an offset log-pseudo-joint, f = lpj + |2 min lpj| + eps, which
is strictly positive and preserves the lpj ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

EPS_FITNESS = 1e-8

SELECTIONS = ("fitparents", "randparents")
MUTATIONS = ("randflips", "sparseflips")


@dataclass
class EaConfig:
    selection: str = "fitparents"
    use_crossover: bool = False
    mutation: str = "randflips"
    n_parents: int = 5
    n_mutations: int = 1  # copies per parent when crossover is off
    n_generations: int = 1
    p_bf: float | None = None  # mean bitflip probability; None means 1/H
    # With crossover + sparseflips: "replace" applies per-bit sparseflips
    # instead of the single flip, "augment" applies both.
    crossover_mutation: str = "replace"

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ConfigError(f"unknown selection {self.selection!r}")
        if self.mutation not in MUTATIONS:
            raise ConfigError(f"unknown mutation {self.mutation!r}")
        if self.crossover_mutation not in ("replace", "augment"):
            raise ConfigError(f"unknown crossover_mutation {self.crossover_mutation!r}")
        if self.n_parents < 1 or self.n_mutations < 1 or self.n_generations < 1:
            raise ConfigError("n_parents, n_mutations and n_generations must be >= 1")
        if self.use_crossover and self.n_parents < 2:
            raise ConfigError("crossover needs at least two parents")

    @property
    def children_per_generation(self) -> int:
        if self.use_crossover:
            return self.n_parents * (self.n_parents - 1)
        return self.n_parents * self.n_mutations

    @property
    def tag(self) -> str:
        cross = "-cross" if self.use_crossover else ""
        return f"{self.selection}{cross}-{self.mutation}"

    @classmethod
    def from_tag(cls, tag: str, **kwargs) -> "EaConfig":
        parts = tag.strip().lower().split("-")
        if len(parts) == 2:
            sel, mut = parts
            cross = False
        elif len(parts) == 3 and parts[1] == "cross":
            sel, mut = parts[0], parts[2]
            cross = True
        else:
            raise ConfigError(f"cannot parse EA tag {tag!r}")
        if sel not in SELECTIONS or mut not in MUTATIONS:
            raise ConfigError(f"cannot parse EA tag {tag!r}")
        return cls(selection=sel, use_crossover=cross, mutation=mut, **kwargs)


def fitness(lpj: np.ndarray, axis: int = -1) -> np.ndarray:
    """Strictly positive, order-preserving offset of lpj over a generation."""
    lpj = np.asarray(lpj, dtype=np.float64)
    const = np.abs(2.0 * lpj.min(axis=axis, keepdims=True))
    return lpj + const + EPS_FITNESS


def _promote(states, lpj=None):
    states = np.asarray(states, dtype=np.uint8)
    single = states.ndim == 2
    if single:
        states = states[None]
        if lpj is not None:
            lpj = np.asarray(lpj, dtype=np.float64)[None]
    return states, lpj, single


def select_parents(states, lpj, config: EaConfig, rng: np.random.Generator):
    """Pick N_p distinct parents per population, (.., S, H) -> (.., N_p, H)."""
    states, lpj, single = _promote(states, lpj)
    n, size, _ = states.shape
    if config.n_parents > size:
        raise ValueError(f"population of {size} cannot yield {config.n_parents} parents")
    if config.selection == "fitparents":
        # Gumbel top-k keys realize sampling without replacement with
        # probabilities proportional to fitness.
        f = fitness(lpj, axis=1)
        gumbel = -np.log(-np.log(rng.random((n, size))))
        keys = np.log(f) + gumbel
    else:
        keys = rng.random((n, size))
    pick = np.argsort(-keys, axis=1, kind="stable")[:, : config.n_parents]
    parents = np.take_along_axis(states, pick[:, :, None], axis=1)
    return parents[0] if single else parents


def crossover(parents, rng: np.random.Generator):
    """Single-point crossover of all parent pairs, (.., N_p, H) -> (.., N_c, H).

    Every unordered pair draws one crossover point c in {1..H-1} and swaps
    the last H-c bits, contributing two children; N_c = N_p (N_p - 1).
    """
    parents, _, single = _promote(parents)
    n, n_par, h = parents.shape
    if n_par < 2:
        raise ValueError("crossover needs at least two parents")
    if h < 2:
        raise ValueError("crossover needs at least two bits")
    ii, jj = np.triu_indices(n_par, k=1)
    c = rng.integers(1, h, size=(n, len(ii)))
    keep_head = np.arange(h)[None, None, :] < c[:, :, None]
    a = parents[:, ii, :]
    b = parents[:, jj, :]
    child_ab = np.where(keep_head, a, b)
    child_ba = np.where(keep_head, b, a)
    children = np.concatenate([child_ab[:, :, None, :], child_ba[:, :, None, :]], axis=2)
    children = children.reshape(n, 2 * len(ii), h)
    return children[0] if single else children


def sparseflip_probs(on_counts, h: int, p_bf: float, s_tilde: float):
    """Per-state flip probabilities (p0 for zero bits, p1 = alpha p0 for ones).

    Solves for a mean flip probability of p_bf and an expected post-mutation
    on-bit count of s_tilde; degenerate counts (0 or H) and out-of-range
    solutions are clamped to [0, 1].
    """
    counts = np.asarray(on_counts, dtype=np.float64)
    hp = h * p_bf
    with np.errstate(divide="ignore", invalid="ignore"):
        denom_a = (s_tilde - counts + hp) * counts
        alpha = (h - counts) * (hp - s_tilde + counts) / denom_a
        p0 = hp / (h + (alpha - 1.0) * counts)
        p1 = alpha * p0
        # alpha blows up when its denominator vanishes; take the limit.
        limit = np.abs(denom_a) < 1e-300
        p0 = np.where(limit, 0.0, p0)
        p1 = np.where(limit, np.where(counts > 0, hp / np.where(counts > 0, counts, 1.0), 0.0), p1)
    p0 = np.where(counts == 0, np.minimum(1.0, s_tilde / h + p_bf), p0)
    p1 = np.where(counts == 0, 0.0, p1)
    p1 = np.where(counts == h, np.clip(1.0 - s_tilde / h + p_bf, 0.0, 1.0), p1)
    p0 = np.where(counts == h, 0.0, p0)
    return np.clip(np.nan_to_num(p0), 0.0, 1.0), np.clip(np.nan_to_num(p1), 0.0, 1.0)


def _single_flips(children, rng):
    n, k, h = children.shape
    idx = rng.integers(0, h, size=(n, k, 1))
    flipped = np.take_along_axis(children, idx, axis=2) ^ 1
    out = children.copy()
    np.put_along_axis(out, idx, flipped, axis=2)
    return out


def _sparse_flips(children, h, p_bf, s_tilde, rng):
    counts = children.sum(axis=2)
    p0, p1 = sparseflip_probs(counts, h, p_bf, s_tilde)
    prob = np.where(children == 1, p1[:, :, None], p0[:, :, None])
    flips = rng.random(children.shape) < prob
    return children ^ flips.astype(np.uint8)


def mutate(children, config: EaConfig, s_tilde: float, rng: np.random.Generator, after_crossover: bool = False):
    """Mutate offspring, (.., N_c, H) -> same shape."""
    children, _, single = _promote(children)
    h = children.shape[2]
    p_bf = config.p_bf if config.p_bf is not None else 1.0 / h
    if config.mutation == "randflips":
        out = _single_flips(children, rng)
    elif after_crossover and config.crossover_mutation == "augment":
        out = _sparse_flips(_single_flips(children, rng), h, p_bf, s_tilde, rng)
    else:
        out = _sparse_flips(children, h, p_bf, s_tilde, rng)
    return out[0] if single else out


def evolve(states, lpj, config: EaConfig, lpj_fn, s_tilde: float, rng: np.random.Generator):
    """Run N_g generations of selection, recombination and mutation.

    lpj_fn maps candidate states (.., K, H) to their log-pseudo-joints; the
    union of all generations' offspring is returned together with those
    values. Candidate lists may contain repeats; the set update drops them.
    """
    states, lpj, single = _promote(states, lpj)
    h = states.shape[2]
    if config.use_crossover and h < 2:
        raise ValueError("crossover needs at least two bits")
    gen_states, gen_lpj = states, lpj
    all_states, all_lpj = [], []
    for _ in range(config.n_generations):
        parents = select_parents(gen_states, gen_lpj, config, rng)
        if config.use_crossover:
            children = crossover(parents, rng)
        else:
            children = np.repeat(parents, config.n_mutations, axis=1)
        children = mutate(children, config, s_tilde, rng, after_crossover=config.use_crossover)
        child_lpj = lpj_fn(children[0] if single else children)
        child_lpj = np.asarray(child_lpj, dtype=np.float64)
        if single:
            child_lpj = child_lpj.reshape(1, -1)
        all_states.append(children)
        all_lpj.append(child_lpj)
        gen_states, gen_lpj = children, child_lpj
    cand = np.concatenate(all_states, axis=1)
    cand_lpj = np.concatenate(all_lpj, axis=1)
    return (cand[0], cand_lpj[0]) if single else (cand, cand_lpj)
