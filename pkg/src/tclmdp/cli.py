"""Command-line experiment runner.

Every subcommand reads one JSON config (a fixed key set per subcommand),
accepts ``--set key=value`` overrides (values parsed as JSON when possible)
and writes its outputs plus ``manifest.json`` into the output directory.
``TCLMDP_OUT_DIR`` overrides the configured directory.

Exit codes: 0 success, 1 internal error, 2 input or validation error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coordinator import CoSimConfig, EnsembleSpec, run, write_dispatch, write_trace
from .drtools import BaselineRule, DrEvent, baseline, error_metrics, load_events, write_metrics
from .gridopf import RadialNetwork, UncertainInjection, four_bus_feeder, load_network
from .lsmdp import UtilitySchedule, expected_power, objective_value, propagate, solve_backward
from .markov import StateSpace, TransitionMatrix, discretize, estimate_transitions, read_matrix, validate, write_matrix
from .synth import TclModel, WeatherSeries, load_trajectory, simulate_ensemble, write_trajectory
from .uncertainty import TransitionUncertainty, ambiguity_bounds, solve_robust, solve_stochastic
from .zlearning import LearningSchedule, passive_samples, z_learn

log = logging.getLogger("tclmdp")

OUT_ENV = "TCLMDP_OUT_DIR"
EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_NOCONV = 0, 1, 2, 3


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- configs

@dataclass
class MpBuildConfig:
    trajectory: str | None = None
    synthetic: dict | None = None
    n_states: int = 10
    scheme: str = "uniform"
    max_distance: float | None = None
    out_dir: str = "out/mp_build"
    seed: int = 0


@dataclass
class MdpSolveConfig:
    matrix: str | None = None
    pbar: list | None = None
    p_kw: list | None = None
    q_kvar: list | None = None
    utility: list | None = None
    horizon: int | None = None
    gamma: float = 1.0
    rho0: list | str = "uniform"
    variant: str = "standard"
    sigma2: float = 0.0
    varsigma: float = 1.0
    xi: float = 1.0
    n_samples: int = 2
    out_dir: str = "out/mdp_solve"
    seed: int = 0


@dataclass
class ZlearnConfig:
    matrix: str | None = None
    pbar: list | None = None
    n_states: int = 5
    utility: list | None = None
    utility_range: list = field(default_factory=lambda: [-1.0, 1.0])
    horizon: int = 8
    gamma: float = 1.0
    n_samples: int = 100_000
    c: float = 2.0
    explore: float = 0.0
    record_every: int = 10_000
    order: str = "stream"
    out_dir: str = "out/zlearn"
    seed: int = 0


@dataclass
class CosimCliConfig:
    network: str | dict = "four_bus"
    ensembles: list = field(default_factory=list)
    sigma_kw: list | float = 0.0
    eps: float = 0.05
    tariff: list | float = 1.0
    delta: float = 0.01
    decay: bool = False
    prox: float | None = None
    max_iter: int = 1000
    tol: float = 1e-4
    out_dir: str = "out/cosim"
    seed: int = 0


@dataclass
class DrReportConfig:
    trajectory: str = ""
    events: list | str = field(default_factory=list)
    building: str = "building"
    holidays: list = field(default_factory=list)
    window: int = 10
    top: int = 5
    low_fraction: float = 0.25
    low_window: int = 30
    rank_by: str = "event"
    out_dir: str = "out/dr_report"
    seed: int = 0


CONFIGS = {
    "mp-build": MpBuildConfig,
    "mdp-solve": MdpSolveConfig,
    "zlearn": ZlearnConfig,
    "cosim": CosimCliConfig,
    "dr-report": DrReportConfig,
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(cls, path=None, overrides=()):
    """Build a config dataclass from a JSON file and ``key=value`` overrides; unknown keys are rejected."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
    for item in overrides:
        if "=" not in item:
            raise InputError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        data[k.strip()] = _parse_value(v)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    cfg = cls(**data)
    _check_types(cfg)
    return cfg


def _check_types(cfg):
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        default = f.default if f.default is not dataclasses.MISSING else None
        if v is None or default is None:
            continue
        if isinstance(default, bool):
            ok = isinstance(v, bool)
        elif isinstance(default, int):
            ok = isinstance(v, int) and not isinstance(v, bool)
        elif isinstance(default, float):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool) or isinstance(v, list)
        elif isinstance(default, str):
            ok = isinstance(v, (str, list, dict))
        else:
            ok = True
        if not ok:
            raise InputError(f"config key {f.name!r} has the wrong type ({type(v).__name__})")


def resolve(path, base):
    """Relative paths in a config are taken relative to the config file."""
    p = Path(path)
    return p if p.is_absolute() or base is None else Path(base) / p


def config_hash(cfg):
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def out_dir(cfg):
    d = Path(os.environ.get(OUT_ENV) or cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_manifest(d, command, cfg, extra=None):
    man = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
    }
    if extra:
        man.update(extra)
    write_json(Path(d) / "manifest.json", man)


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------- shared input helpers

def _matrix_and_states(cfg, base=None):
    ss = None
    if cfg.matrix:
        tm, ss = read_matrix(resolve(cfg.matrix, base))
        P = tm.P
    elif cfg.pbar is not None:
        P = TransitionMatrix(np.asarray(cfg.pbar, dtype=float)).P
    else:
        raise InputError("config needs either 'matrix' or 'pbar'")
    p_kw = getattr(cfg, "p_kw", None)
    if p_kw is not None:
        ss = StateSpace.from_levels(p_kw, getattr(cfg, "q_kvar", None))
    if ss is None:
        ss = StateSpace.from_levels(np.arange(P.shape[0], dtype=float))
    if ss.n != P.shape[0]:
        raise InputError("state space and matrix sizes differ")
    return P, ss


def _utility(U, horizon, n):
    if U is None:
        if horizon is None:
            raise InputError("need 'utility' or 'horizon'")
        return np.zeros((horizon, n))
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        if horizon is None:
            raise InputError("a per-state utility vector needs 'horizon'")
        U = np.tile(U, (horizon, 1))
    if U.shape[1] != n or (horizon is not None and U.shape[0] != horizon):
        raise InputError(f"utility must have shape (horizon, {n})")
    return U


def _rho0(spec, n):
    if isinstance(spec, str):
        if spec != "uniform":
            raise InputError("rho0 must be 'uniform' or a probability list")
        return np.full(n, 1.0 / n)
    r = np.asarray(spec, dtype=float)
    if r.shape != (n,) or np.any(r < 0) or abs(r.sum() - 1) > 1e-12:
        raise InputError("rho0 must be a probability vector over the states")
    return r


# ---------------------------------------------------------------- subcommands

def cmd_mp_build(cfg: MpBuildConfig, base=None):
    d = out_dir(cfg)
    if cfg.trajectory:
        traj = load_trajectory(resolve(cfg.trajectory, base))
    elif cfg.synthetic is not None:
        syn = dict(cfg.synthetic)
        allowed = {"n_units", "steps", "dt_s", "t_out", "heterogeneity"} | {
            f.name for f in dataclasses.fields(TclModel)}
        bad = sorted(set(syn) - allowed)
        if bad:
            raise InputError(f"unknown synthetic keys: {', '.join(bad)}")
        n_units = int(syn.pop("n_units", 100))
        steps = int(syn.pop("steps", 2000))
        dt_s = float(syn.pop("dt_s", 60.0))
        t_out = float(syn.pop("t_out", 5.0))
        het = float(syn.pop("heterogeneity", 0.1))
        model = TclModel(**syn)
        run_ = simulate_ensemble((model, n_units), WeatherSeries.constant(t_out, 1, dt_s), steps, dt_s,
                                 seed=cfg.seed, heterogeneity=het)
        traj = run_.trajectory
        write_trajectory(traj, d / "trajectory.csv")
    else:
        raise InputError("config needs either 'trajectory' or 'synthetic'")
    ss = discretize(traj, cfg.n_states, cfg.scheme)
    P = estimate_transitions(traj, ss)
    report = validate(P, traj, ss)
    write_matrix(d / "transition.csv", P.P, ss, {"scheme": cfg.scheme, "samples": len(traj)})
    write_json(d / "validation.json", report.to_dict())
    write_manifest(d, "mp-build", cfg)
    if cfg.max_distance is not None:
        if report.distance is None or report.distance > cfg.max_distance:
            raise InputError(f"validation failed: stationary distance {report.distance} "
                             f"exceeds {cfg.max_distance}")
    return EXIT_OK


def cmd_mdp_solve(cfg: MdpSolveConfig, base=None):
    d = out_dir(cfg)
    P, ss = _matrix_and_states(cfg, base)
    n = P.shape[0]
    U = _utility(cfg.utility, cfg.horizon, n)
    sched = UtilitySchedule(U, cfg.gamma)
    rho0 = _rho0(cfg.rho0, n)
    extra = {"gamma": cfg.gamma, "horizon": int(U.shape[0]), "terminal": "z_{T+1} = 1",
             "variant": cfg.variant}
    if cfg.variant == "standard":
        des, pol = solve_backward(P, sched)
    elif cfg.variant == "stochastic":
        des, pol = solve_stochastic(TransitionUncertainty(P, cfg.sigma2), sched)
    elif cfg.variant == "robust":
        amb = ambiguity_bounds(P, float(np.sqrt(cfg.sigma2)), cfg.n_samples, cfg.varsigma, cfg.xi,
                               sigma2=cfg.sigma2)
        des, pol = solve_robust(amb, sched)
        extra["ambiguity"] = amb.to_dict()
    else:
        raise InputError(f"unknown variant {cfg.variant!r}")
    dist = propagate(rho0, pol)
    p, q = expected_power(dist, ss)
    with open(d / "policy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dest", "origin", "prob"])
        for t in range(pol.horizon):
            for a in range(n):
                for b in range(n):
                    w.writerow([t, a, b, _fmt(pol.P[t, a, b])])
    with open(d / "dispatch.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_kw", "q_kvar"] + [f"rho_{a}" for a in range(n)])
        for t in range(dist.rho.shape[0]):
            w.writerow([t, _fmt(p[t]), _fmt(q[t])] + [_fmt(v) for v in dist.rho[t]])
    with open(d / "desirability.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"log_z_{a}" for a in range(n)])
        for t in range(des.log_z.shape[0]):
            w.writerow([t] + [_fmt(v) for v in des.log_z[t]])
    with open(d / "objective.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "step_cost", "cumulative"])
        total = 0.0
        for t in range(pol.horizon):
            step = objective_value(type(pol)(pol.P[t:t + 1]), type(dist)(dist.rho[t:t + 2]), P,
                                   UtilitySchedule(U[t:t + 1], cfg.gamma))
            total += step
            w.writerow([t, _fmt(step), _fmt(total)])
    extra["objective"] = total
    write_manifest(d, "mdp-solve", cfg, extra)
    return EXIT_OK


def cmd_zlearn(cfg: ZlearnConfig, base=None):
    d = out_dir(cfg)
    rng = np.random.default_rng(cfg.seed)
    if cfg.matrix or cfg.pbar is not None:
        P, _ = _matrix_and_states(cfg, base)
    else:
        P = rng.dirichlet(np.ones(cfg.n_states), size=cfg.n_states).T
        P = P / P.sum(axis=0)
    n = P.shape[0]
    if cfg.utility is not None:
        U = _utility(cfg.utility, cfg.horizon, n)
    else:
        lo, hi = cfg.utility_range
        U = rng.uniform(lo, hi, size=(cfg.horizon, n))
    sched = UtilitySchedule(U, cfg.gamma)
    des, _ = solve_backward(P, sched)
    samples = passive_samples(P, cfg.horizon, cfg.n_samples, seed=int(rng.integers(2**32)),
                              explore=cfg.explore)
    res = z_learn(samples, sched, LearningSchedule(c=cfg.c), Pbar=P, z_ref=des.z,
                  record_every=cfg.record_every, order=cfg.order)
    with open(d / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["samples", "max_relative_error"])
        for k, e in res.curve:
            w.writerow([k, _fmt(e)])
    with open(d / "z_hat.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"z_{a}" for a in range(n)])
        for t, row in enumerate(res.desirability.z):
            w.writerow([t] + [_fmt(v) for v in row])
    err = float(np.max(np.abs(res.desirability.z - des.z) / des.z))
    write_manifest(d, "zlearn", cfg, {"max_relative_error": err, "rejected": res.rejected,
                                      "updates": res.n_updates})
    return EXIT_OK


def _network(spec, base):
    if isinstance(spec, dict):
        return RadialNetwork.from_dict(spec)
    if spec == "four_bus":
        return four_bus_feeder()
    return load_network(resolve(spec, base))


ENSEMBLE_KEYS = {"bus", "matrix", "pbar", "p_kw", "q_kvar", "utility", "gamma", "rho0", "variant",
                 "sigma2", "varsigma", "xi", "n_samples"}


def cmd_cosim(cfg: CosimCliConfig, base=None):
    d = out_dir(cfg)
    if not cfg.ensembles:
        raise InputError("cosim needs at least one ensemble")
    net = _network(cfg.network, base)
    specs = []
    horizon = None
    for e in cfg.ensembles:
        bad = sorted(set(e) - ENSEMBLE_KEYS)
        if bad:
            raise InputError(f"unknown ensemble keys: {', '.join(bad)}")
        sub = MdpSolveConfig(matrix=e.get("matrix"), pbar=e.get("pbar"), p_kw=e.get("p_kw"),
                             q_kvar=e.get("q_kvar"))
        P, ss = _matrix_and_states(sub, base)
        U = np.atleast_2d(np.asarray(e["utility"], dtype=float))
        horizon = horizon or U.shape[0]
        bus = e["bus"]
        bus = net.index(bus) if isinstance(bus, str) else int(bus)
        variant = e.get("variant", "standard")
        amb = None
        s2 = float(e.get("sigma2", 0.0))
        if variant == "robust":
            amb = ambiguity_bounds(P, float(np.sqrt(s2)), int(e.get("n_samples", 2)),
                                   float(e.get("varsigma", 1.0)), float(e.get("xi", 1.0)), sigma2=s2)
        specs.append(EnsembleSpec(bus, P, ss, U, float(e.get("gamma", 1.0)),
                                  _rho0(e.get("rho0", "uniform"), ss.n), variant, s2, amb))
    unc = UncertainInjection(cfg.sigma_kw if isinstance(cfg.sigma_kw, list) else
                             np.full(net.n_bus, float(cfg.sigma_kw)), cfg.eps)
    cc = CoSimConfig(tuple(specs), net, unc, np.asarray(cfg.tariff, dtype=float), cfg.delta, cfg.decay,
                     cfg.max_iter, cfg.tol, cfg.prox)
    rep = run(cc)
    write_trace(rep, d / "trace.csv")
    write_dispatch(rep, cc, d / "dispatch.csv")
    summary = {
        "converged": rep.converged,
        "iterations": rep.iterations,
        "objective": rep.objective,
        "primal_residual": rep.primal_residual,
        "lam_p": rep.dual.lam_p,
        "lam_q": rep.dual.lam_q,
        "binding": [o.binding for o in rep.opf],
    }
    write_json(d / "report.json", summary)
    write_manifest(d, "cosim", cfg, {"converged": rep.converged})
    if not rep.converged:
        log.error("coordinator did not converge within %d iterations", cfg.max_iter)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_dr_report(cfg: DrReportConfig, base=None):
    d = out_dir(cfg)
    if not cfg.trajectory:
        raise InputError("dr-report needs 'trajectory'")
    traj = load_trajectory(resolve(cfg.trajectory, base))
    if isinstance(cfg.events, str):
        events = load_events(resolve(cfg.events, base))
    else:
        events = [DrEvent(e["date"], int(e["start_hour"]), int(e["end_hour"]), float(e["enrolled_kw"]))
                  for e in cfg.events]
    if not events:
        raise InputError("dr-report needs at least one event")
    rows, baselines = [], {}
    for ev in events:
        rule = BaselineRule(cfg.window, cfg.top, cfg.low_fraction, cfg.low_window, cfg.rank_by,
                            tuple(cfg.holidays), tuple(e.date for e in events if e.date < ev.date))
        b = baseline(traj, ev, rule)
        m = error_metrics(b, traj, ev)
        rows.append((cfg.building, ev, m))
        baselines[ev.date.isoformat()] = {
            "hourly_kw": b.hourly_kw,
            "event_kw": b.event_kw(ev),
            "days": [x.isoformat() for x in b.days],
            "exclusions": b.exclusions,
            "mean_baseline_error_pct": m.mean_baseline_error_pct,
            "curtailment_error_pct": m.curtailment_error_total_pct,
        }
    write_metrics(rows, d / "metrics.csv")
    write_json(d / "baselines.json", baselines)
    write_manifest(d, "dr-report", cfg)
    return EXIT_OK


COMMANDS = {
    "mp-build": cmd_mp_build,
    "mdp-solve": cmd_mdp_solve,
    "zlearn": cmd_zlearn,
    "cosim": cmd_cosim,
    "dr-report": cmd_dr_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="tclmdp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (JSON value)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(CONFIGS[args.command], args.config, args.set)
        base = Path(args.config).parent if args.config else None
        return COMMANDS[args.command](cfg, base)
    except (InputError, ValueError, KeyError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
