import numpy as np
import pytest

from tclmdp.lsmdp import UtilitySchedule, kl_divergence, policy_from_desirability, solve_backward
from tclmdp.uncertainty import AmbiguitySet, ambiguity_bounds, robust_policy
from tclmdp.zlearning import (LearningSchedule, TransitionSample, ZLearner, empirical_default,
                              max_relative_error, passive_samples, robustify_learned, z_learn)

from oracles import random_stochastic


def bench(seed, n=5, T=8):
    rng = np.random.default_rng(seed)
    Pb = random_stochastic(n, rng)
    return Pb, UtilitySchedule(rng.uniform(-1, 1, (T, n)), 1.0)


def test_single_state_chain_fixed_point():
    s = UtilitySchedule(np.zeros((4, 1)), 1.0)
    res = z_learn(passive_samples(np.ones((1, 1)), 4, 50, seed=0), s)
    np.testing.assert_array_equal(res.desirability.z, 1.0)


def test_zero_utility_invariant():
    Pb, _ = bench(0)
    s = UtilitySchedule(np.zeros((8, 5)), 1.0)
    res = z_learn(passive_samples(Pb, 8, 5000, seed=1), s)
    np.testing.assert_array_equal(res.desirability.z, 1.0)


def test_zero_step_size_never_changes():
    Pb, s = bench(1)
    res = z_learn(passive_samples(Pb, 8, 2000, seed=2), s, LearningSchedule(rule=lambda k: 0.0))
    np.testing.assert_array_equal(res.desirability.z, 1.0)


def test_estimates_stay_positive():
    Pb, _ = bench(2)
    s = UtilitySchedule(np.random.default_rng(0).uniform(-20, 20, (8, 5)), 1.0)
    res = z_learn(passive_samples(Pb, 8, 20_000, seed=3), s)
    assert np.all(res.desirability.z > 0)


def test_out_of_range_samples_rejected_and_counted():
    Pb, s = bench(3)
    samples = [TransitionSample(0, 0, 1), TransitionSample(99, 0, 1), TransitionSample(1, 7, 0),
               TransitionSample(2, 1, -1)]
    res = z_learn(samples, s)
    assert res.rejected == 3 and res.n_updates == 1


def test_step_size_rule():
    ls = LearningSchedule(c=2.0)
    assert ls.eta(0) == 1.0
    etas = [ls.eta(k) for k in range(100)]
    assert all(b <= a for a, b in zip(etas, etas[1:]))
    with pytest.raises(ValueError):
        LearningSchedule(c=0.0)


def test_benchmark_accuracy_single_seed():
    Pb, s = bench(0)
    des, _ = solve_backward(Pb, s)
    res = z_learn(passive_samples(Pb, 8, 100_000, seed=10_000), s, LearningSchedule(c=1.0),
                  order="backward")
    assert max_relative_error(res.desirability.z, des.z) <= 0.08


def test_error_decreases_over_windows_on_average():
    curves = []
    for seed in range(20):
        Pb, s = bench(seed)
        des, _ = solve_backward(Pb, s)
        res = z_learn(passive_samples(Pb, 8, 100_000, seed=10_000 + seed), s, Pbar=Pb, z_ref=des.z,
                      record_every=10_000)
        curves.append([e for _, e in res.curve])
    mean = np.mean(curves, axis=0)
    assert np.all(np.diff(mean) <= 0)


def test_exploration_weights_keep_estimate_unbiased():
    Pb, s = bench(4)
    des, _ = solve_backward(Pb, s)
    res = z_learn(passive_samples(Pb, 8, 100_000, seed=5, explore=0.3), s, LearningSchedule(c=1.0),
                  order="backward")
    assert max_relative_error(res.desirability.z, des.z) <= 0.1


def test_learner_snapshot_is_a_copy():
    Pb, s = bench(5)
    zl = ZLearner(s)
    snap = zl.snapshot()
    zl.update(TransitionSample(0, 0, 0))
    assert np.all(snap.z == 1.0)


def test_induced_policy_uses_empirical_default_when_not_given():
    Pb, s = bench(6)
    samples = passive_samples(Pb, 8, 50_000, seed=6)
    res = z_learn(samples, s)
    np.testing.assert_allclose(res.default_matrix, empirical_default(samples, 5).P)
    np.testing.assert_allclose(res.policy.P.sum(axis=1), 1.0, atol=1e-12)


def test_robustify_learned():
    Pb, s = bench(7)
    des, pol = solve_backward(Pb, s)
    np.testing.assert_allclose(robustify_learned(des, AmbiguitySet.collapsed(Pb, 0.0)).P, pol.P, atol=1e-12)
    zh = z_learn(passive_samples(Pb, 8, 20_000, seed=1), s).desirability
    np.testing.assert_allclose(robustify_learned(zh, AmbiguitySet.collapsed(Pb, 0.0)).P,
                               policy_from_desirability(Pb, zh).P, atol=1e-12)
    wide = ambiguity_bounds(Pb, 0.05, 5, 0.1, 0.1)
    rob = robust_policy(wide, des).P
    assert sum(kl_divergence(rob[t], pol.P[t]).sum() for t in range(8)) > 0


def test_invalid_order():
    Pb, s = bench(8)
    with pytest.raises(ValueError):
        z_learn([], s, order="random")
