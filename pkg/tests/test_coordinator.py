import numpy as np
import pytest

from tclmdp.coordinator import (CoSimConfig, DualState, EnsembleSpec, dual_update, effective_schedule,
                                mdp_step, run, write_dispatch, write_trace)
from tclmdp.gridopf import UncertainInjection, four_bus_feeder
from tclmdp.lsmdp import UtilitySchedule, expected_power, propagate, solve_backward
from tclmdp.markov import StateSpace
from tclmdp.uncertainty import AmbiguitySet

from oracles import PBAR2, U2, joint_bruteforce, two_bus_config


def standalone_p(spec):
    _, pol = solve_backward(spec.Pbar, UtilitySchedule(spec.U, spec.gamma))
    return expected_power(propagate(spec.rho0, pol), spec.states)[0][1:]


def test_zero_prices_reproduce_standalone():
    cfg = two_bus_config()
    disp = mdp_step(cfg, DualState.zeros(2, 2, cfg.delta))
    for spec, d in zip(cfg.ensembles, disp):
        np.testing.assert_array_equal(d.p, standalone_p(spec))


def test_positive_price_lowers_consumption():
    cfg = two_bus_config()
    dual = DualState.zeros(2, 2, cfg.delta)
    base = mdp_step(cfg, dual)[0].p
    dual.lam_p[:] = 0.2
    assert np.all(mdp_step(cfg, dual)[0].p < base)


def test_reactive_terms_vanish_without_reactive_power():
    cfg = two_bus_config()
    spec = cfg.ensembles[0]
    a = effective_schedule(spec, np.array([0.1, 0.2]), np.zeros(2)).U
    b = effective_schedule(spec, np.array([0.1, 0.2]), np.array([5.0, -3.0])).U
    np.testing.assert_array_equal(a, b)


def test_price_shift_is_not_cumulative():
    spec = two_bus_config().ensembles[0]
    lam = np.array([0.1, 0.3])
    once = effective_schedule(spec, lam, np.zeros(2)).U
    again = effective_schedule(spec, lam, np.zeros(2)).U
    np.testing.assert_array_equal(once, again)
    np.testing.assert_allclose(once, spec.U - np.outer(lam, spec.states.p))


def test_dual_update_arithmetic():
    d = DualState.zeros(2, 2, 0.1)
    z = np.zeros((2, 2))
    same = dual_update(d, z, z, z, z)
    np.testing.assert_array_equal(same.lam_p, 0.0)
    mdp = z.copy()
    mdp[1, 0] = 1.0
    moved = dual_update(d, mdp, mdp, z, z)
    assert moved.lam_p[1, 0] == pytest.approx(0.1)
    assert moved.lam_q[1, 0] == pytest.approx(0.1)
    assert moved.nu == 2


def test_alternating_mismatch_oscillates():
    d = DualState.zeros(1, 1, 0.5)
    z = np.zeros((1, 1))
    seq = []
    for k in range(4):
        mis = np.full((1, 1), 2.0 if k % 2 == 0 else -2.0)
        d = dual_update(d, mis, z, z, z)
        seq.append(d.lam_p[0, 0])
    np.testing.assert_allclose(seq, [1.0, 0.0, 1.0, 0.0])


def test_zero_step_keeps_everything_constant():
    cfg = two_bus_config(delta=0.0, max_iter=4)
    rep = run(cfg)
    np.testing.assert_array_equal(rep.dual.lam_p, 0.0)
    objs = {row["mdp_objective"] for row in rep.trace}
    assert len(objs) == 1


def test_converges_to_joint_optimum():
    cfg = two_bus_config()
    rep = run(cfg, record_dual=True)
    assert rep.converged
    assert rep.primal_residual <= 1e-4
    assert rep.opf[0].binding or rep.opf[1].binding, "instance should bind a voltage limit"
    best = joint_bruteforce(cfg)
    assert abs(rep.objective - best) <= 0.01 * abs(best)
    dual = [row["dual_objective"] for row in rep.trace]
    assert all(b >= a - 1e-9 for a, b in zip(dual, dual[1:]))
    assert rep.objective - dual[-1] <= 1e-5


def test_non_binding_network_reproduces_standalone():
    cfg = two_bus_config(load_kw=400.0, tariff=0.0)
    rep = run(cfg)
    assert rep.converged
    for spec, d in zip(cfg.ensembles, rep.dispatch):
        assert np.abs(d.p - standalone_p(spec)).max() <= 1e-6
    assert not any(o.binding for o in rep.opf)


def test_decaying_step_converges():
    base = two_bus_config(load_kw=400.0)
    rep = run(CoSimConfig(base.ensembles, base.network, base.uncertainty, tariff=0.05, delta=0.01,
                          decay=True, tol=1e-4))
    assert rep.converged


def test_variants_run_in_the_loop():
    base = two_bus_config()
    ens = (EnsembleSpec(1, PBAR2, base.ensembles[0].states, U2, 1.0, [0.5, 0.5], "stochastic", 0.001),
           EnsembleSpec(2, PBAR2, base.ensembles[1].states, 1.2 * U2, 1.0, [0.3, 0.7], "robust",
                        ambiguity=AmbiguitySet.collapsed(PBAR2, 0.001)))
    rep = run(CoSimConfig(ens, base.network, base.uncertainty, 0.05, 0.01, tol=1e-5))
    assert rep.converged and rep.primal_residual <= 1e-4
    # attenuation changes the dispatch relative to the standard solve
    assert np.abs(rep.dispatch[0].p - run(base).dispatch[0].p).max() > 1e-6


def test_dispatch_within_range_every_iteration():
    cfg = two_bus_config()
    rep = run(cfg)
    for spec, d in zip(cfg.ensembles, rep.dispatch):
        assert np.all((d.p >= spec.states.p.min()) & (d.p <= spec.states.p.max()))
    for o in rep.opf:
        assert np.all((o.p >= -1e-9) & (o.p <= 20.0 + 1e-9))


def test_infeasibility_reports_iteration():
    base = two_bus_config(load_kw=560.0)
    with pytest.raises(ValueError, match="iteration 1"):
        run(base)


def test_config_validation():
    base = two_bus_config()
    bad = EnsembleSpec(7, PBAR2, base.ensembles[0].states, U2, 1.0, [0.5, 0.5])
    with pytest.raises(ValueError, match="does not exist"):
        CoSimConfig((bad,), base.network)
    with pytest.raises(ValueError, match="robust"):
        EnsembleSpec(1, PBAR2, base.ensembles[0].states, U2, 1.0, [0.5, 0.5], "robust")


def test_four_bus_feeder_runs_with_parallel_workers():
    net = four_bus_feeder(horizon=3)
    ss = StateSpace.from_levels([0.0, 10.0, 20.0])
    Pb = np.array([[0.6, 0.2, 0.1], [0.3, 0.6, 0.3], [0.1, 0.2, 0.6]])
    U = np.tile([0.0, 0.4, 0.6], (3, 1))
    ens = (EnsembleSpec(2, Pb, ss, U, 1.0, np.full(3, 1 / 3)), EnsembleSpec(3, Pb, ss, U, 1.0, np.full(3, 1 / 3)))
    kw = dict(uncertainty=UncertainInjection([0, 5, 5, 5]), tariff=0.05, tol=1e-5)
    serial = run(CoSimConfig(ens, net, **kw))
    parallel = run(CoSimConfig(ens, net, workers=4, **kw))
    assert serial.converged
    np.testing.assert_array_equal(serial.p, parallel.p)


def test_writers(tmp_path):
    cfg = two_bus_config(load_kw=400.0)
    rep = run(cfg)
    write_trace(rep, tmp_path / "trace.csv")
    write_dispatch(rep, cfg, tmp_path / "dispatch.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[0].startswith("nu,dual_change")
    assert len((tmp_path / "dispatch.csv").read_text().splitlines()) == 1 + 2 * 2
