import numpy as np
import pytest

from evoem.datasets import DataSet
from evoem.mathutil import LARGE_NEG
from evoem.models import noisyor

from oracles import all_states, exact_posterior, log_joint_nor


def small_params(rng, d=5, h=3):
    return noisyor.NoisyOrParams(
        pi=rng.uniform(0.15, 0.5, h), W=rng.uniform(0.05, 0.9, (d, h))
    )


def test_zero_state_cases():
    p = noisyor.NoisyOrParams(pi=[0.3, 0.3], W=np.full((2, 2), 0.5))
    assert noisyor.log_pseudo_joint([0, 0], [0, 0], None, p) == 0.0
    assert noisyor.log_pseudo_joint([0, 0], [1, 0], None, p) == LARGE_NEG
    # Masked: the observed part decides.
    mask = np.array([False, True])
    assert noisyor.log_pseudo_joint([0, 0], [1, 0], mask, p) == 0.0


def test_log_constant_worked_example():
    p = noisyor.NoisyOrParams(pi=[0.5] * 3, W=np.full((2, 3), 0.5))
    assert noisyor.log_constant(p) == pytest.approx(3 * np.log(0.5), abs=1e-12)


def test_lpj_plus_constant_equals_log_joint(rng):
    p = small_params(rng)
    states = all_states(3)
    y = (rng.random(5) < 0.5).astype(float)
    got = noisyor.lpj(states[None], y[None], None, p)[0] + noisyor.log_constant(p)
    for s, g in zip(states, got):
        if s.sum() == 0 and y.sum() > 0:
            assert g <= LARGE_NEG / 2
        else:
            assert g == pytest.approx(log_joint_nor(s, y, p), abs=1e-10)


def test_lpj_masked(rng):
    p = small_params(rng)
    states = all_states(3)
    y = (rng.random(5) < 0.5).astype(float)
    mask = np.array([True, True, False, True, False])
    got = noisyor.lpj(states[None], y[None], mask[None], p)[0] + noisyor.log_constant(p)
    for s, g in zip(states, got):
        if s.sum() == 0:
            continue
        assert g == pytest.approx(log_joint_nor(s, y, p, mask), abs=1e-10)


def test_sample_all_one_columns_saturate(rng):
    p = noisyor.NoisyOrParams(pi=[0.999, 0.999], W=np.clip(np.ones((3, 2)), 0, 1 - 1e-6))
    data, latents = noisyor.sample(p, 200, rng)
    active = latents["s"].sum(axis=1) > 0
    assert np.allclose(data.Y[active], 1.0)


def test_sample_is_binary(rng):
    data, _ = noisyor.sample(small_params(rng), 100, rng)
    data.require_binary()


def exact_em_update(data, params, pi_floor=None):
    d, h = params.d, params.h
    sum_s = np.zeros(h)
    num = np.zeros((d, h))
    den = np.zeros((d, h))
    for n in range(data.n):
        states, w, _ = exact_posterior(log_joint_nor, data.Y[n], params)
        sum_s += w @ states
        for weight, s in zip(w, states):
            if s.sum() == 0:
                continue
            on = 1.0 - np.prod(1.0 - params.W * s, axis=1)
            for j in np.nonzero(s)[0]:
                wtil = np.prod(np.delete(1.0 - params.W * s, j, axis=1), axis=1)
                dd = wtil / (on * (1 - on))
                num[:, j] += weight * (data.Y[n] - 1.0) * dd
                den[:, j] += weight * wtil * dd
    pi = np.clip(sum_s / data.n, 1e-5, 1 - 1e-5)
    if pi_floor is not None:
        pi = np.maximum(pi, pi_floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        W = 1.0 + num / den
    W = np.where(den > 0, W, params.W)
    return pi, np.clip(W, 1e-6, 1 - 1e-6)


def test_m_step_matches_exact_em_oracle(rng):
    d, h, n = 5, 3, 25
    p = small_params(rng, d, h)
    data = DataSet((rng.random((n, d)) < 0.4).astype(float))
    states = np.broadcast_to(all_states(h), (n, 2**h, h)).copy()
    lpj = noisyor.lpj(states, data.Y, None, p)
    new = noisyor.m_step(data, states, lpj, p)
    pi_o, w_o = exact_em_update(data, p)
    assert np.abs(new.pi - pi_o).max() < 1e-10
    assert np.abs(new.W - w_o).max() < 1e-10


def test_m_step_respects_clamps_and_floor(rng):
    d, h, n = 4, 3, 15
    p = small_params(rng, d, h)
    data = DataSet((rng.random((n, d)) < 0.3).astype(float))
    states = np.broadcast_to(all_states(h), (n, 2**h, h)).copy()
    lpj = noisyor.lpj(states, data.Y, None, p)
    new = noisyor.m_step(data, states, lpj, p, pi_floor=1.0 / h)
    assert (new.W >= 1e-6).all() and (new.W <= 1 - 1e-6).all()
    assert (new.pi >= 1.0 / h).all()
    assert ((new.pi > 0) & (new.pi < 1)).all()


def test_binary_validation():
    with pytest.raises(Exception):
        DataSet(np.array([[0.5, 1.0]])).require_binary()
