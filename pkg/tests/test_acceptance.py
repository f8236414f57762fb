"""Acceptance checks, one test per criterion.

Each test appends a ``CRITERION k: PASS|FAIL ...`` line that the terminal
summary prints. Run as a script for the same output:
``python3 tests/test_acceptance.py``.
"""

import datetime as dt
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import conftest
from oracles import direct_objective, grid_policy, joint_bruteforce, random_stochastic, two_bus_config, \
    weekday_fixture
from tclmdp.cli import main as cli_main
from tclmdp.coordinator import run as cosim_run
from tclmdp.drtools import BaselineRule, DrEvent, baseline, fit_price_response
from tclmdp.gridopf import (Coupling, UncertainInjection, four_bus_feeder, solve_ccopf,
                            solve_opf_branch_flow, voltage_violation)
from tclmdp.lsmdp import (UtilitySchedule, bellman_residual, expected_power, optimal_value, propagate,
                          solve_backward)
from tclmdp.markov import discretize, estimate_transitions
from tclmdp.synth import TclModel, WeatherSeries, load_trajectory, simulate_ensemble
from tclmdp.uncertainty import (AmbiguitySet, TransitionUncertainty, ambiguity_bounds, solve_robust,
                                solve_stochastic)
from tclmdp.zlearning import LearningSchedule, empirical_default, max_relative_error, passive_samples, z_learn

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def record(k, ok, detail, seconds=None):
    took = "" if seconds is None else f" [{seconds:.1f} s]"
    conftest.ACCEPTANCE_LINES.append(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}{took}")


def column_error(P):
    P = np.asarray(P)
    return max(float(np.abs(P.sum(axis=-2) - 1).max()), float(max(0, -P.min(), P.max() - 1)))


# ---------------------------------------------------------------- 1

def test_c1_stochasticity_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    mats, rhos = [], []
    steps = 2000
    run = simulate_ensemble((TclModel(), 100), WeatherSeries.constant(5.0, steps), steps, 60.0, seed=1)
    mats.append(estimate_transitions(run.trajectory, discretize(run.trajectory, 10)).P)
    for _ in range(20):
        n, T = int(rng.integers(2, 12)), int(rng.integers(1, 12))
        Pb = random_stochastic(n, rng, sparsity=0.3)
        sched = UtilitySchedule(rng.uniform(-5, 5, (T, n)), float(rng.uniform(0.2, 3)))
        rho0 = rng.dirichlet(np.ones(n))
        pols = [solve_backward(Pb, sched)[1],
                solve_stochastic(TransitionUncertainty(Pb, 0.01), sched)[1],
                solve_robust(ambiguity_bounds(Pb, 0.02, 10, 0.05, 0.05), sched)[1]]
        for pol in pols:
            mats.append(pol.P)
            rhos.append(propagate(rho0, pol).rho)
    Pb = random_stochastic(4, rng)
    samples = passive_samples(Pb, 4, 5000, seed=2)
    res = z_learn(samples, UtilitySchedule(rng.uniform(-1, 1, (4, 4)), 1.0))
    mats += [res.policy.P, empirical_default(samples, 4).P]
    rep = cosim_run(two_bus_config())
    for d in rep.dispatch:
        mats.append(d.policy.P)
        rhos.append(d.dist.rho)
    col = max(column_error(P) for P in mats)
    rho = max(float(np.abs(r.sum(axis=1) - 1).max()) for r in rhos)
    neg = min(float(r.min()) for r in rhos)
    secs = time.perf_counter() - t0
    ok = col <= 1e-12 and rho <= 1e-12 and neg >= 0 and secs < 5
    record(1, ok, f"{len(mats)} matrices, max column error {col:.1e}; {len(rhos)} distributions, "
                  f"max sum error {rho:.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 2

def test_c2_bellman_fixed_point():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n, T = int(rng.integers(1, 33)), int(rng.integers(1, 49))
        Pb = random_stochastic(n, rng, sparsity=float(rng.uniform(0, 0.7)))
        sched = UtilitySchedule(rng.uniform(-10, 10, (T, n)), float(rng.uniform(0.1, 5)))
        des, _ = solve_backward(Pb, sched)
        worst = max(worst, float(bellman_residual(Pb, sched, des).max()))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and secs < 30
    record(2, ok, f"50 instances (n <= 32, T <= 48), max relative residual {worst:.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 3

def test_c3_policy_matches_grid_search():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_p = worst_obj = 0.0
    count = 0
    for n in (1, 2, 3):
        for T in (1, 2, 3):
            for _ in range(4):
                Pb = random_stochastic(n, rng, sparsity=0.3 if n == 3 else 0.0)
                sched = UtilitySchedule(rng.uniform(-2, 2, (T, n)), float(rng.uniform(0.3, 2)))
                rho0 = rng.dirichlet(np.ones(n))
                des, pol = solve_backward(Pb, sched)
                Pg, _ = grid_policy(Pb, sched.U, sched.gamma)
                worst_p = max(worst_p, float(np.abs(Pg - pol.P).max()))
                brute = direct_objective(Pg, Pb, sched.U, sched.gamma, rho0)
                worst_obj = max(worst_obj, abs(brute - optimal_value(des, rho0)))
                count += 1
    secs = time.perf_counter() - t0
    ok = worst_p <= 1e-3 and worst_obj <= 1e-4 and secs < 300
    record(3, ok, f"{count} instances, max entry gap {worst_p:.1e}, max objective gap {worst_obj:.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 4

def test_c4_limit_chain():
    rng = np.random.default_rng(4)
    gap_s = gap_r = 0.0
    for _ in range(20):
        n, T = int(rng.integers(2, 10)), int(rng.integers(1, 10))
        Pb = random_stochastic(n, rng, sparsity=0.3)
        sched = UtilitySchedule(rng.uniform(-3, 3, (T, n)), 1.0)
        _, std = solve_backward(Pb, sched)
        _, sto0 = solve_stochastic(TransitionUncertainty(Pb, 0.0), sched)
        gap_s = max(gap_s, float(np.abs(sto0.P - std.P).max()))
        s2 = float(rng.uniform(1e-4, 1e-2))
        _, sto = solve_stochastic(TransitionUncertainty(Pb, s2), sched)
        _, rob = solve_robust(AmbiguitySet.collapsed(Pb, s2), sched)
        gap_r = max(gap_r, float(np.abs(rob.P - sto.P).max()))
    ok = gap_s <= 1e-12 and gap_r <= 1e-12
    record(4, ok, f"stochastic vs standard {gap_s:.1e}, robust vs stochastic {gap_r:.1e}")
    assert ok


# ---------------------------------------------------------------- 5

def test_c5_quantiles_from_ambiguity_bounds():
    N = 10
    # a small spread keeps the mean bounds clear of the [0, 1] clip
    s = 0.01
    amb = ambiguity_bounds(np.full((2, 2), 0.5), s, N, 0.05, 0.05)
    t = (0.5 - amb.gamma_low[0, 0]) * np.sqrt(N) / s
    chi_hi = (N - 1) * s ** 2 / amb.zeta_low
    chi_lo = (N - 1) * s ** 2 / amb.zeta_high
    gaps = (abs(t - 2.262), abs(chi_hi - 19.023), abs(chi_lo - 2.700))
    ok = max(gaps) <= 1e-3
    record(5, ok, f"t = {t:.4f}, chi2 upper = {chi_hi:.4f}, chi2 lower = {chi_lo:.4f}")
    assert ok


# ---------------------------------------------------------------- 6

def zlearning_errors(order, c, seeds=range(20)):
    errs = []
    for s in seeds:
        rng = np.random.default_rng(s)
        Pb = random_stochastic(5, rng)
        sched = UtilitySchedule(rng.uniform(-1, 1, (8, 5)), 1.0)
        des, _ = solve_backward(Pb, sched)
        res = z_learn(passive_samples(Pb, 8, 100_000, seed=10_000 + s), sched, LearningSchedule(c=c),
                      order=order)
        errs.append(max_relative_error(res.desirability.z, des.z))
    return float(np.mean(errs))


def test_c6_zlearning_convergence():
    t0 = time.perf_counter()
    mean_err = zlearning_errors("backward", 1.0)
    secs = time.perf_counter() - t0
    stream = zlearning_errors("stream", 2.0)
    ok = mean_err <= 0.05 and secs < 60
    record(6, ok, f"batch replay mean max relative error {mean_err:.4f} over 20 seeds "
                  f"(streaming c=2: {stream:.4f})", secs)
    assert ok


# ---------------------------------------------------------------- 7

def test_c7_ccopf_validity():
    t0 = time.perf_counter()
    net = four_bus_feeder()
    assert np.allclose(net.v_min, 0.95) and np.allclose(net.v_max, 1.05)
    cp = Coupling((2, 3), [0.0, 0.0], [600.0, 600.0])
    kw = dict(tariff=1.0, prox=0.01, ref_p=[600.0, 600.0])
    unc = UncertainInjection([0.0, 20.0, 40.0, 40.0], 0.05)
    dec = solve_ccopf(net, unc, 0, cp, **kw)
    per, any_v = voltage_violation(net, unc, dec, 10_000, seed=7)
    det = solve_opf_branch_flow(net, 0, cp, **kw)
    zero = solve_ccopf(net, UncertainInjection(np.zeros(4), 0.05), 0, cp, **kw)
    gap = abs(zero.objective - det.objective)
    secs = time.perf_counter() - t0
    ok = dec.binding and per.max() <= 0.06 and gap <= 1e-8 and secs < 60
    record(7, ok, f"max per-limit violation rate {per.max():.4f} (any-limit {any_v:.4f}), "
                  f"sigma=0 vs branch-flow objective gap {gap:.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_c8_dual_decomposition_consensus():
    t0 = time.perf_counter()
    cfg = two_bus_config()
    rep = cosim_run(cfg)
    best = joint_bruteforce(cfg)
    rel = abs(rep.objective - best) / abs(best)
    free = two_bus_config(load_kw=400.0, tariff=0.0)
    rep_free = cosim_run(free)
    gap = 0.0
    for spec, d in zip(free.ensembles, rep_free.dispatch):
        _, pol = solve_backward(spec.Pbar, UtilitySchedule(spec.U, spec.gamma))
        alone = expected_power(propagate(spec.rho0, pol), spec.states)[0][1:]
        gap = max(gap, float(np.abs(d.p - alone).max()))
    secs = time.perf_counter() - t0
    ok = (rep.converged and rel <= 0.01 and rep.primal_residual <= 1e-4 and rep_free.converged
          and gap <= 1e-6 and secs < 300)
    record(8, ok, f"objective {rep.objective:.6f} vs grid optimum {best:.6f} (gap {100 * rel:.3f}%), "
                  f"residual {rep.primal_residual:.1e}, non-binding dispatch gap {gap:.1e}", secs)
    assert ok


# ---------------------------------------------------------------- 9

DISPATCH_WORST = []


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 2**31 - 1),
       st.sampled_from(["standard", "stochastic", "robust"]))
def _dispatch_range(n, T, seed, variant):
    rng = np.random.default_rng(seed)
    Pb = random_stochastic(n, rng, sparsity=0.4)
    levels = rng.uniform(-50, 200, n)
    sched = UtilitySchedule(rng.uniform(-20, 20, (T, n)), float(rng.uniform(0.05, 5)))
    if variant == "standard":
        _, pol = solve_backward(Pb, sched)
    elif variant == "stochastic":
        _, pol = solve_stochastic(TransitionUncertainty(Pb, 0.05), sched)
    else:
        _, pol = solve_robust(ambiguity_bounds(Pb, 0.05, 8, 0.1, 0.1), sched)
    # raw expectation, before any clipping
    p = propagate(rng.dirichlet(np.ones(n)), pol).rho @ levels
    excess = max(float(levels.min() - p.min()), float(p.max() - levels.max()), 0.0)
    DISPATCH_WORST.append(excess / max(1.0, np.abs(levels).max()))
    assert excess <= 1e-12 * max(1.0, np.abs(levels).max())


def test_c9_dispatch_range():
    DISPATCH_WORST.clear()
    try:
        _dispatch_range()
        ok = True
    except AssertionError:
        ok = False
    record(9, ok, f"{len(DISPATCH_WORST)} random policies, max relative excursion outside "
                  f"[min p, max p] {max(DISPATCH_WORST, default=0):.1e}")
    assert ok


# ---------------------------------------------------------------- 10

DR_DATASET = os.environ.get("TCLMDP_DR_DATASET")


def test_c10_baseline_rule():
    event = DrEvent("2016-11-28", 13, 17, 50.0)
    exact = True
    for extra, hol in ((0, ()), (3, (dt.date(2016, 11, 24),)), (5, (dt.date(2016, 11, 16),))):
        traj, days, profiles = weekday_fixture(extra_days=extra, holidays=hol)
        last10 = days[-10:]
        score = {d: profiles[d][13:17].mean() for d in last10}
        top = sorted(last10, key=lambda d: (-score[d], -d.toordinal()))[:5]
        expected = sum(profiles[d] for d in top) / 5
        got = baseline(traj, event, BaselineRule(holidays=hol))
        exact &= bool(np.array_equal(got.hourly_kw, expected))
    if DR_DATASET and Path(DR_DATASET).exists():
        traj = load_trajectory(DR_DATASET)
        b = baseline(traj, DrEvent("2016-11-26", 13, 17, 0.0)).event_kw(DrEvent("2016-11-26", 13, 17, 0.0))
        level = float(b.mean())
        soft = f"real-data event baseline {level:.1f} kW ({'in' if 299 <= level <= 306 else 'outside'} 299-306)"
    else:
        soft = "real-data soft check skipped (set TCLMDP_DR_DATASET to a trajectory CSV)"
    record(10, exact, f"synthetic fixtures exact: {exact}; {soft}")
    assert exact


# ---------------------------------------------------------------- 11

def test_c11_price_response_recovery():
    rng = np.random.default_rng(11)
    lam = rng.uniform(0.1, 3.0, 50)
    clean = fit_price_response(lam, -4.0 * lam + 10.0)
    clean_err = max(abs(clean.beta1[0] + 4.0), abs(clean.beta0[0] - 10.0))
    b1, b0, sigma = 3.0, 1.0, 0.5
    est, inside = [], 0
    for _ in range(100):
        x = rng.uniform(0, 2, 200)
        m = fit_price_response(x, b1 * x + b0 + rng.normal(0, sigma, 200))
        est.append((m.beta1[0], m.beta0[0], m.se1[0], m.se0[0]))
        inside += abs(m.beta1[0] - b1) <= 3 * m.se1[0] and abs(m.beta0[0] - b0) <= 3 * m.se0[0]
    est = np.array(est)
    # the 100-run mean has standard error se / sqrt(100)
    mean_ok = (abs(est[:, 0].mean() - b1) <= 3 * est[:, 2].mean() / 10
               and abs(est[:, 1].mean() - b0) <= 3 * est[:, 3].mean() / 10)
    ok = clean_err <= 1e-12 and mean_ok and inside >= 95
    record(11, ok, f"noiseless error {clean_err:.1e}; {inside}/100 runs within 3 SE; "
                  f"mean slope {est[:, 0].mean():.4f} (true {b1})")
    assert ok


# ---------------------------------------------------------------- 12

def test_c12_cli_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    same = {}
    for cmd in ("mp-build", "mdp-solve", "zlearn", "cosim", "dr-report"):
        outs = []
        for k in range(2):
            d = tmp_path / f"{cmd}-{k}"
            monkeypatch.setenv("TCLMDP_OUT_DIR", str(d))
            code = cli_main([cmd, str(CONFIGS / f"{cmd.replace('-', '_')}.json")])
            outs.append((code, {p.name: p.read_bytes() for p in sorted(d.iterdir())}))
        same[cmd] = outs[0][0] == 0 and outs[0] == outs[1]
    secs = time.perf_counter() - t0
    ok = all(same.values())
    record(12, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()), secs)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider", *sys.argv[1:]]))
