import numpy as np
import pytest

from evoem.errors import ConfigError
from evoem.evolution import (
    EaConfig,
    crossover,
    evolve,
    fitness,
    mutate,
    select_parents,
    sparseflip_probs,
)


def test_ea_tag_round_trip():
    for tag in [
        "fitparents-randflips",
        "randparents-randflips",
        "fitparents-cross-sparseflips",
        "randparents-cross-sparseflips",
        "fitparents-sparseflips",
        "fitparents-cross-randflips",
    ]:
        assert EaConfig.from_tag(tag).tag == tag
    with pytest.raises(ConfigError):
        EaConfig.from_tag("bogus-tag")


def test_children_per_generation_counts():
    assert EaConfig(use_crossover=True, n_parents=5).children_per_generation == 20
    assert EaConfig(use_crossover=False, n_parents=2, n_mutations=3).children_per_generation == 6


def test_fitness_worked_example():
    f = fitness(np.array([-10.0, -4.0]))
    assert f == pytest.approx([10.0, 16.0], abs=1e-6)
    # all-equal lpj of zero still yields strictly positive fitness
    f0 = fitness(np.array([0.0, 0.0]))
    assert (f0 > 0).all()
    assert f0[0] == pytest.approx(f0[1])


def test_fitness_preserves_order(rng):
    lpj = rng.standard_normal(50) * 100
    f = fitness(lpj)
    assert np.array_equal(np.argsort(f), np.argsort(lpj))


def test_select_all_when_np_equals_population(rng):
    states = (rng.random((6, 4)) < 0.5).astype(np.uint8)
    lpj = rng.standard_normal(6)
    for sel in ("fitparents", "randparents"):
        cfg = EaConfig(selection=sel, n_parents=6)
        parents = select_parents(states, lpj, cfg, rng)
        assert sorted(map(tuple, parents.tolist())) == sorted(map(tuple, states.tolist()))


def test_select_too_many_parents_raises(rng):
    states = (rng.random((3, 4)) < 0.5).astype(np.uint8)
    with pytest.raises(ValueError):
        select_parents(states, np.zeros(3), EaConfig(n_parents=4), rng)


def test_fitparents_strongly_prefers_dominant_state(rng):
    # One state's fitness ~1e6 times the rest: it should nearly always be picked.
    states = np.eye(6, dtype=np.uint8)
    lpj = np.full(6, -3.0)
    lpj[2] = 1e6 - 3.0  # fitness offset makes ratios ~1e6 after the |2 min| shift
    cfg = EaConfig(selection="fitparents", n_parents=1)
    hits = 0
    trials = 10_000
    picks = select_parents(
        np.broadcast_to(states, (trials, 6, 6)), np.broadcast_to(lpj, (trials, 6)), cfg, rng
    )
    hits = (picks[:, 0, 2] == 1).sum()
    assert hits / trials > 0.999


def test_randparents_uniform_frequencies(rng):
    trials = 100_000
    states = np.eye(5, dtype=np.uint8)
    cfg = EaConfig(selection="randparents", n_parents=1)
    picks = select_parents(
        np.broadcast_to(states, (trials, 5, 5)),
        np.zeros((trials, 5)),
        cfg,
        rng,
    )
    counts = picks[:, 0, :].sum(axis=0).astype(float)
    expected = trials / 5
    # chi-square-style bound: 3 sigma on each cell
    sigma = np.sqrt(trials * 0.2 * 0.8)
    assert np.abs(counts - expected).max() < 3 * sigma


def test_crossover_definition_and_count(rng):
    parents = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
    children = crossover(parents, rng)
    assert children.shape == (2, 4)
    # single-point swap at any c of these complementary parents yields
    # prefix-of-one + suffix-of-other
    for child in children:
        t = tuple(child.tolist())
        assert t in {(1, 1, 1, 1), (0, 0, 0, 0), (1, 0, 0, 0), (0, 1, 1, 1),
                     (1, 1, 1, 0), (0, 0, 0, 1), (1, 1, 0, 1), (0, 0, 1, 0)}
    assert crossover((rng.random((5, 8)) < 0.5).astype(np.uint8), rng).shape == (20, 8)


def test_crossover_identical_parents_reproduce(rng):
    parents = np.tile(np.array([1, 0, 1, 0], dtype=np.uint8), (3, 1))
    children = crossover(parents, rng)
    assert np.all(children == np.array([1, 0, 1, 0], dtype=np.uint8))


def test_crossover_needs_two_bits(rng):
    with pytest.raises(ValueError):
        crossover(np.array([[1], [0]], dtype=np.uint8), rng)


def test_sparseflip_probs_worked_case():
    p0, p1 = sparseflip_probs(np.array([2.0]), 10, 0.1, 2.0)
    assert p0[0] == pytest.approx(0.0625, abs=1e-12)
    assert p1[0] == pytest.approx(0.25, abs=1e-12)


def test_sparseflip_probs_uniform_special_case():
    # p0 == p1 == p_bf whenever the target equals the expected drift-free value
    # H p_bf - s_tilde + |s| == ... ; easiest: alpha == 1 configurations.
    # alpha = 1 iff (H - c)(Hp - st + c) == (st - c + Hp) c
    h, p_bf = 8, 0.125
    c = 4.0
    st = c * (1 - p_bf) + (h - c) * p_bf  # on-bits expected under uniform flips
    p0, p1 = sparseflip_probs(np.array([c]), h, p_bf, st)
    assert p0[0] == pytest.approx(p_bf, abs=1e-12)
    assert p1[0] == pytest.approx(p_bf, abs=1e-12)


def test_sparseflip_probs_edge_counts():
    p0, p1 = sparseflip_probs(np.array([0.0]), 10, 0.1, 2.0)
    assert p0[0] == pytest.approx(min(1.0, 2.0 / 10 + 0.1))
    assert p1[0] == 0.0
    p0, p1 = sparseflip_probs(np.array([10.0]), 10, 0.1, 2.0)
    assert p0[0] == 0.0
    assert 0.0 <= p1[0] <= 1.0


def test_sparseflip_probs_always_in_unit_interval(rng):
    for _ in range(200):
        h = int(rng.integers(2, 40))
        c = float(rng.integers(0, h + 1))
        p_bf = float(rng.uniform(0.01, 0.5))
        st = float(rng.uniform(0.1, h))
        p0, p1 = sparseflip_probs(np.array([c]), h, p_bf, st)
        assert 0.0 <= p0[0] <= 1.0
        assert 0.0 <= p1[0] <= 1.0


def test_randflips_single_bit_distance(rng):
    cfg = EaConfig(mutation="randflips")
    children = (rng.random((7, 9, 12)) < 0.5).astype(np.uint8)
    mutated = mutate(children, cfg, s_tilde=2.0, rng=rng)
    assert ((children ^ mutated).sum(axis=2) == 1).all()


def test_sparseflips_expected_on_bits(rng):
    h, s_tilde, p_bf = 10, 2.0, 0.1
    cfg = EaConfig(mutation="sparseflips", p_bf=p_bf)
    child = np.zeros((1, 100_000, h), dtype=np.uint8)
    child[:, :, :2] = 1
    mutated = mutate(child, cfg, s_tilde=s_tilde, rng=rng)
    mean_on = mutated.sum(axis=2).mean()
    p0, p1 = sparseflip_probs(np.array([2.0]), h, p_bf, s_tilde)
    var = 2 * p1[0] * (1 - p1[0]) + 8 * p0[0] * (1 - p0[0])
    se = np.sqrt(var / 100_000)
    assert abs(mean_on - s_tilde) < 3 * se


def test_evolve_counts_no_crossover(rng):
    cfg = EaConfig(selection="randparents", use_crossover=False, mutation="randflips",
                   n_parents=2, n_mutations=3, n_generations=1)
    states = (rng.random((4, 6)) < 0.5).astype(np.uint8)
    lpj = rng.standard_normal(4)
    cand, cand_lpj = evolve(states, lpj, cfg, lambda c: np.zeros(c.shape[:-1]), 2.0, rng)
    assert cand.shape == (6, 6)
    assert cand_lpj.shape == (6,)


def test_evolve_counts_crossover_two_generations(rng):
    cfg = EaConfig(selection="fitparents", use_crossover=True, mutation="randflips",
                   n_parents=5, n_generations=2)
    states = (rng.random((8, 8)) < 0.5).astype(np.uint8)
    lpj = rng.standard_normal(8)
    calls = []

    def lpj_fn(c):
        calls.append(c.shape)
        return np.zeros(c.shape[:-1])

    cand, _ = evolve(states, lpj, cfg, lpj_fn, 2.0, rng)
    assert cand.shape == (40, 8)
    assert calls == [(20, 8), (20, 8)]


def test_evolve_deterministic_given_stream(rng):
    cfg = EaConfig(selection="fitparents", use_crossover=True, mutation="sparseflips",
                   n_parents=3, n_generations=2)
    states = (rng.random((2, 5, 7)) < 0.5).astype(np.uint8)
    lpj = rng.standard_normal((2, 5))

    def lpj_fn(c):
        return -c.sum(axis=-1).astype(float)

    r1 = evolve(states, lpj, cfg, lpj_fn, 1.5, np.random.default_rng(99))
    r2 = evolve(states, lpj, cfg, lpj_fn, 1.5, np.random.default_rng(99))
    assert np.array_equal(r1[0], r2[0])
    assert np.array_equal(r1[1], r2[1])


def test_config_validation():
    with pytest.raises(ConfigError):
        EaConfig(selection="tournament")
    with pytest.raises(ConfigError):
        EaConfig(n_parents=0)
    with pytest.raises(ConfigError):
        EaConfig(use_crossover=True, n_parents=1)
