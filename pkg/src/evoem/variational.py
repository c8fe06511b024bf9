"""Truncated-posterior machinery.

Each datapoint owns a population of S unique binary states together with
cached log-pseudo-joints; the population doubles as the variational
parameters. Set updates keep the top-S states by lpj from the union of the
current population and offspring candidates, which provably never decreases
the per-set logsumexp and hence the free energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitpack import lexsort_rows, pack_states, state_key
from .mathutil import logsumexp, posterior_weights
from .models import get_model, kind_of


class BinaryState:
    """Immutable binary latent vector; equality and hashing over bit content."""

    __slots__ = ("_bits", "_key")

    def __init__(self, bits):
        self._bits = np.ascontiguousarray(np.asarray(bits).astype(np.uint8) & 1)
        if self._bits.ndim != 1:
            raise ValueError("a state is a flat bit vector")
        self._bits.setflags(write=False)
        self._key = state_key(self._bits)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def __len__(self) -> int:
        return self._bits.shape[0]

    def __eq__(self, other):
        return isinstance(other, BinaryState) and len(self) == len(other) and self._key == other._key

    def __hash__(self):
        return hash((len(self), self._key))

    def __repr__(self):
        return f"BinaryState({''.join(str(b) for b in self._bits)})"


def update_sets_batch(states, lpj, cand_states, cand_lpj):
    """Top-S-by-lpj merge of populations and candidates, batched over rows.

    states (N,S,H) uint8, lpj (N,S); cand_states (N,K,H), cand_lpj (N,K).
    Duplicates (within candidates or against the set) are dropped; ties in
    lpj break towards lexicographically smaller bit strings; among equal
    states the incumbent set member wins. Returns (new_states, new_lpj).
    """
    states = np.asarray(states, dtype=np.uint8)
    cand_states = np.asarray(cand_states, dtype=np.uint8)
    n, s_size, h = states.shape
    merged = np.concatenate([states, cand_states], axis=1)
    scores = np.concatenate([lpj, cand_lpj], axis=1)

    keys = pack_states(merged)  # (N, M, W)
    order = lexsort_rows(keys)
    keys_sorted = np.take_along_axis(keys, order[:, :, None], axis=1)
    scores_sorted = np.take_along_axis(scores, order, axis=1)

    dup = np.all(keys_sorted[:, 1:, :] == keys_sorted[:, :-1, :], axis=2)
    first = np.ones(scores_sorted.shape, dtype=bool)
    first[:, 1:] = ~dup
    valid = np.where(first, scores_sorted, -np.inf)

    # Rows are key-ascending, so a stable sort on -lpj keeps the
    # lexicographic order among ties and pushes duplicates (-inf) last.
    pick = np.argsort(-valid, axis=1, kind="stable")[:, :s_size]
    final = np.take_along_axis(order, pick, axis=1)
    new_states = np.take_along_axis(merged, final[:, :, None], axis=1)
    new_lpj = np.take_along_axis(scores_sorted, pick, axis=1)
    return np.ascontiguousarray(new_states), np.ascontiguousarray(new_lpj)


@dataclass
class LatentStateSet:
    """Population of S unique states for one datapoint with cached lpj."""

    states: np.ndarray  # (S, H) uint8
    lpj: np.ndarray  # (S,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.uint8)
        self.lpj = np.asarray(self.lpj, dtype=np.float64)
        if self.states.ndim != 2 or self.lpj.shape != (self.states.shape[0],):
            raise ValueError("need states (S, H) with matching lpj (S,)")
        keys = {state_key(row) for row in self.states}
        if len(keys) != self.states.shape[0]:
            raise ValueError("states must be pairwise distinct")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def h(self) -> int:
        return self.states.shape[1]

    def __contains__(self, state) -> bool:
        bits = state.bits if isinstance(state, BinaryState) else np.asarray(state)
        return state_key(bits) in {state_key(row) for row in self.states}

    def state(self, i: int) -> BinaryState:
        return BinaryState(self.states[i])

    def weights(self) -> np.ndarray:
        return posterior_weights(self.lpj)

    def update(self, cand_states, cand_lpj) -> "LatentStateSet":
        new_states, new_lpj = update_sets_batch(
            self.states[None], self.lpj[None], np.asarray(cand_states, np.uint8)[None], np.asarray(cand_lpj, np.float64)[None]
        )
        return LatentStateSet(new_states[0], new_lpj[0])


def truncated_expectation(g, state_set: LatentStateSet) -> np.ndarray:
    """Posterior expectation of g over the truncated support of the set.

    g maps a BinaryState to a float or vector; weights are the softmax of
    the cached lpj values.
    """
    if state_set.size == 0:
        raise ValueError("empty state set")
    w = state_set.weights()
    vals = np.stack([np.asarray(g(state_set.state(i)), dtype=np.float64) for i in range(state_set.size)])
    return np.einsum("s,s...->...", w, vals)


class StateSetCollection:
    """One LatentStateSet per datapoint, stored as dense (N, S, H) arrays."""

    def __init__(self, states: np.ndarray, lpj: np.ndarray | None = None):
        self.states = np.asarray(states, dtype=np.uint8)
        if self.states.ndim != 3:
            raise ValueError("states must have shape (N, S, H)")
        n, s, _ = self.states.shape
        self.lpj = np.zeros((n, s)) if lpj is None else np.asarray(lpj, dtype=np.float64)
        if self.lpj.shape != (n, s):
            raise ValueError("lpj must have shape (N, S)")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def s(self) -> int:
        return self.states.shape[1]

    @property
    def h(self) -> int:
        return self.states.shape[2]

    def __getitem__(self, i: int) -> LatentStateSet:
        return LatentStateSet(self.states[i], self.lpj[i])

    def logsumexp_per_set(self) -> np.ndarray:
        return logsumexp(self.lpj, axis=1)

    def weights(self) -> np.ndarray:
        return posterior_weights(self.lpj, axis=1)

    def update(self, cand_states, cand_lpj):
        self.states, self.lpj = update_sets_batch(self.states, self.lpj, cand_states, cand_lpj)


def refresh_lpj(sets: StateSetCollection, params, data, block: int = 4096):
    """Recompute every cached lpj under the current parameters."""
    model = get_model(kind_of(params))
    for a in range(0, sets.n, block):
        z = slice(a, a + block)
        m = None if data.mask is None else data.mask[z]
        sets.lpj[z] = model.lpj(sets.states[z], data.Y[z], m, params)


def free_energy(sets: StateSetCollection, params, data) -> float:
    """Variational lower bound: sum_n [ logsumexp(lpj_n) + C_n(theta) ]."""
    model = get_model(kind_of(params))
    const = model.log_constant(params, data.observed_counts())
    return float(sets.logsumexp_per_set().sum() + np.sum(const))
