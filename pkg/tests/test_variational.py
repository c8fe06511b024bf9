import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoem.datasets import DataSet
from evoem.learning import init_state_sets
from evoem.mathutil import logsumexp, posterior_weights
from evoem.models import bsc
from evoem.variational import (
    BinaryState,
    LatentStateSet,
    StateSetCollection,
    free_energy,
    refresh_lpj,
    truncated_expectation,
    update_sets_batch,
)

from oracles import all_states, exact_posterior, log_joint_bsc


def test_binary_state_hash_equality():
    a = BinaryState([1, 0, 1])
    b = BinaryState(np.array([1, 0, 1], dtype=np.int64))
    c = BinaryState([1, 0, 0])
    assert a == b and hash(a) == hash(b)
    assert a != c
    assert len({a, b, c}) == 2


def test_truncated_expectation_singleton():
    s = LatentStateSet(np.array([[1, 0]], dtype=np.uint8), np.array([-3.0]))
    val = truncated_expectation(lambda state: state.bits.astype(float), s)
    assert np.array_equal(val, [1.0, 0.0])


def test_truncated_expectation_two_states_weighted():
    # lpj {0, log 3} puts weights {1/4, 3/4}; first-bit expectation 0.25
    s = LatentStateSet(
        np.array([[1, 0], [0, 1]], dtype=np.uint8), np.array([0.0, np.log(3.0)])
    )
    val = truncated_expectation(lambda state: float(state.bits[0]), s)
    assert val == pytest.approx(0.25, abs=1e-12)
    assert s.weights().sum() == pytest.approx(1.0, abs=1e-12)


def test_truncated_expectation_exhaustive_equals_brute_force(rng):
    d, h = 4, 6
    p = bsc.BscParams(pi=0.3, sigma2=0.9, W=rng.standard_normal((d, h)))
    y = rng.standard_normal(d)
    states = all_states(h)
    lpj = bsc.lpj(states[None], y[None], None, p)[0]
    sset = LatentStateSet(states, lpj)
    got = truncated_expectation(lambda state: state.bits.astype(float), sset)
    _, w, _ = exact_posterior(log_joint_bsc, y, p)
    want = w @ states
    assert np.abs(got - want).max() < 1e-10


def test_truncated_expectation_empty_set_raises():
    s = LatentStateSet(np.zeros((0, 3), dtype=np.uint8), np.zeros(0))
    with pytest.raises(ValueError):
        truncated_expectation(lambda state: 1.0, s)


def test_update_keeps_top_s():
    s = LatentStateSet(np.array([[0, 0, 1], [0, 1, 0]], dtype=np.uint8), np.array([1.0, 2.0]))
    out = s.update(np.array([[1, 0, 0]], dtype=np.uint8), np.array([3.0]))
    assert sorted(out.lpj.tolist()) == [2.0, 3.0]


def test_update_ignores_duplicates():
    s = LatentStateSet(np.array([[0, 1], [1, 0]], dtype=np.uint8), np.array([1.0, 2.0]))
    out = s.update(np.array([[0, 1], [1, 0]], dtype=np.uint8), np.array([1.0, 2.0]))
    assert np.array_equal(np.sort(out.lpj), np.sort(s.lpj))
    keys = {tuple(row) for row in out.states.tolist()}
    assert len(keys) == 2


def test_update_tie_break_lexicographic():
    # Equal lpj everywhere: keep lexicographically smallest states.
    s = LatentStateSet(np.array([[1, 1], [1, 0]], dtype=np.uint8), np.array([0.0, 0.0]))
    out = s.update(
        np.array([[0, 0], [0, 1]], dtype=np.uint8), np.array([0.0, 0.0])
    )
    kept = sorted(tuple(r) for r in out.states.tolist())
    assert kept == [(0, 0), (0, 1)]


@given(st.integers(0, 10_000))
@settings(max_examples=120, deadline=None)
def test_update_never_decreases_logsumexp(seed):
    rng = np.random.default_rng(seed)
    n, s_size, k, h = 3, 5, 6, 7
    states = init_state_sets(n, h, s_size, 0.4, rng)
    lpj = rng.standard_normal((n, s_size)) * 5
    cand = (rng.random((n, k, h)) < 0.4).astype(np.uint8)
    cand_lpj = rng.standard_normal((n, k)) * 5
    new_states, new_lpj = update_sets_batch(states, lpj, cand, cand_lpj)
    assert (logsumexp(new_lpj, axis=1) >= logsumexp(lpj, axis=1) - 1e-12).all()
    for r in range(n):
        assert len({tuple(x) for x in new_states[r].tolist()}) == s_size


def test_free_energy_additivity_and_singleton(rng):
    d, h = 3, 4
    p = bsc.BscParams(pi=0.4, sigma2=1.1, W=rng.standard_normal((d, h)))
    data = DataSet(rng.standard_normal((2, d)))
    states = (rng.random((2, 1, h)) < 0.5).astype(np.uint8)
    sets = StateSetCollection(states)
    refresh_lpj(sets, p, data)
    got = free_energy(sets, p, data)
    want = sum(
        log_joint_bsc(states[n, 0], data.Y[n], p) for n in range(2)
    )
    assert got == pytest.approx(want, abs=1e-10)
    # additivity: per-set logsumexp values a, b plus constants
    a, b = sets.logsumexp_per_set()
    c = bsc.log_constant(p, d)
    assert got == pytest.approx(a + b + 2 * c, abs=1e-12)


def test_free_energy_exhaustive_equals_log_likelihood(rng):
    d, h, n = 4, 6, 12
    p = bsc.BscParams(pi=0.3, sigma2=0.8, W=rng.standard_normal((d, h)))
    data = DataSet(rng.standard_normal((n, d)))
    states = np.broadcast_to(all_states(h), (n, 2**h, h)).copy()
    sets = StateSetCollection(states)
    refresh_lpj(sets, p, data)
    got = free_energy(sets, p, data)
    want = sum(exact_posterior(log_joint_bsc, data.Y[i], p)[2] for i in range(n))
    assert got == pytest.approx(want, abs=1e-9)


def test_free_energy_eq1_equals_eq4(rng):
    # Direct evaluation with the entropy term against the compact form.
    d, h, n, s_size = 4, 6, 8, 48
    p = bsc.BscParams(pi=0.35, sigma2=0.9, W=rng.standard_normal((d, h)))
    data = DataSet(rng.standard_normal((n, d)))
    states = init_state_sets(n, h, s_size, 0.3, np.random.default_rng(7))
    sets = StateSetCollection(states)
    refresh_lpj(sets, p, data)
    compact = free_energy(sets, p, data)
    direct = 0.0
    for i in range(n):
        w = posterior_weights(sets.lpj[i])
        log_joint = np.array(
            [log_joint_bsc(s, data.Y[i], p) for s in sets.states[i]]
        )
        entropy = -np.sum(w * np.log(w))
        direct += float(w @ log_joint + entropy)
    assert compact == pytest.approx(direct, abs=1e-10)


def test_state_set_collection_views(rng):
    states = init_state_sets(4, 5, 3, 0.4, rng)
    sets = StateSetCollection(states)
    one = sets[2]
    assert isinstance(one, LatentStateSet)
    assert one.size == 3 and one.h == 5
    assert BinaryState(states[2, 0]) in one


def test_latent_state_set_rejects_duplicates():
    with pytest.raises(ValueError):
        LatentStateSet(np.array([[1, 0], [1, 0]], dtype=np.uint8), np.zeros(2))
