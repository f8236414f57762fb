"""Dual decomposition of ensemble dispatch and the feeder OPF.

The coupled problem minimises the ensembles' dispatch costs plus the tariffed
feeder losses, with each ensemble's expected consumption equal to the power
the OPF schedules at its bus. Relaxing that coupling with prices ``lam``:

* ensemble step: solve each MDP with reward ``U - lam_p * p^a - lam_q * q^a``
  (a fresh shift of the base reward every iteration);
* network step: solve the OPF for ``min tariff * loss - lam . (p, q)`` per time,
  plus a proximal term ``prox/2 ||(p, q) - (p, q)_mdp||^2`` that vanishes at
  consensus and keeps the step well posed when losses do not pin ``p`` down;
* price step: ``lam += delta * (mdp injection - opf injection)``.

Positive ``lam_p`` therefore makes consumption expensive for the ensemble.
Coupling slice ``k`` pairs the reward row ``U[k]`` and ``rho_{k+1}`` with the
OPF at time ``k``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gridopf import Coupling, RadialNetwork, UncertainInjection, evaluate, solve_ccopf
from .lsmdp import EnsembleDistribution, Policy, UtilitySchedule, expected_power, objective_value, propagate, solve_backward
from .markov import StateSpace, check_stochastic
from .uncertainty import AmbiguitySet, TransitionUncertainty, solve_robust, solve_stochastic

log = logging.getLogger(__name__)

VARIANTS = ("standard", "stochastic", "robust")


@dataclass(frozen=True)
class EnsembleSpec:
    bus: int
    Pbar: np.ndarray
    states: StateSpace
    U: np.ndarray
    gamma: float
    rho0: np.ndarray
    variant: str = "standard"
    sigma2: float = 0.0
    ambiguity: AmbiguitySet | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.variant == "robust" and self.ambiguity is None:
            raise ValueError("robust variant needs an ambiguity set")
        object.__setattr__(self, "Pbar", check_stochastic(self.Pbar))
        object.__setattr__(self, "U", np.atleast_2d(np.asarray(self.U, dtype=float)))
        object.__setattr__(self, "rho0", np.asarray(self.rho0, dtype=float))

    @property
    def horizon(self):
        return self.U.shape[0]


@dataclass(frozen=True)
class CoSimConfig:
    ensembles: tuple
    network: RadialNetwork
    uncertainty: UncertainInjection | None = None
    tariff: float | np.ndarray = 1.0
    delta: float = 0.01
    decay: bool = False
    max_iter: int = 1000
    tol: float = 1e-4
    prox: float | None = None
    workers: int = 1

    def __post_init__(self):
        ens = tuple(self.ensembles)
        if not ens:
            raise ValueError("at least one ensemble is required")
        T = ens[0].horizon
        if any(e.horizon != T for e in ens):
            raise ValueError("all ensembles must share the horizon")
        for e in ens:
            if not 0 <= e.bus < self.network.n_bus:
                raise ValueError(f"ensemble bus {e.bus} does not exist in the network")
        if self.delta < 0 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("delta must be >= 0, tol > 0 and max_iter >= 1")
        object.__setattr__(self, "ensembles", ens)

    @property
    def horizon(self):
        return self.ensembles[0].horizon

    @property
    def prox_weight(self):
        return self.delta if self.prox is None else self.prox

    def tariff_at(self, t):
        tar = np.asarray(self.tariff, dtype=float)
        return float(tar) if tar.ndim == 0 else float(tar[t])

    def coupling(self):
        return Coupling(
            tuple(e.bus for e in self.ensembles),
            [e.states.p.min() for e in self.ensembles], [e.states.p.max() for e in self.ensembles],
            [e.states.q.min() for e in self.ensembles], [e.states.q.max() for e in self.ensembles])


@dataclass
class DualState:
    """Prices per time (rows) and ensemble (columns)."""

    lam_p: np.ndarray
    lam_q: np.ndarray
    delta: float
    nu: int = 1
    history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, T, m, delta):
        return cls(np.zeros((T, m)), np.zeros((T, m)), delta)


@dataclass
class BusDispatch:
    policy: Policy
    dist: EnsembleDistribution
    p: np.ndarray
    q: np.ndarray
    value: float


def effective_schedule(spec: EnsembleSpec, lam_p, lam_q):
    U = spec.U - np.outer(lam_p, spec.states.p) - np.outer(lam_q, spec.states.q)
    return UtilitySchedule(U, spec.gamma)


def _solve_one(spec: EnsembleSpec, lam_p, lam_q) -> BusDispatch:
    sched = effective_schedule(spec, lam_p, lam_q)
    if spec.variant == "standard":
        _, pol = solve_backward(spec.Pbar, sched)
    elif spec.variant == "stochastic":
        _, pol = solve_stochastic(TransitionUncertainty(spec.Pbar, spec.sigma2), sched)
    else:
        _, pol = solve_robust(spec.ambiguity, sched)
    dist = propagate(spec.rho0, pol)
    p, q = expected_power(dist, spec.states)
    value = objective_value(pol, dist, spec.Pbar, sched)
    return BusDispatch(pol, dist, p[1:], q[1:], value)


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def mdp_step(cfg: CoSimConfig, dual: DualState):
    """Ensemble step for every bus under the current prices."""
    return _map(lambda j: _solve_one(cfg.ensembles[j], dual.lam_p[:, j], dual.lam_q[:, j]),
                range(len(cfg.ensembles)), cfg.workers)


def opf_step(cfg: CoSimConfig, dual: DualState, p_mdp, q_mdp, prox=None):
    coupling = cfg.coupling()
    prox = cfg.prox_weight if prox is None else prox

    def one(t):
        try:
            return solve_ccopf(cfg.network, cfg.uncertainty, t, coupling, dual.lam_p[t], dual.lam_q[t],
                               cfg.tariff_at(t), prox, p_mdp[t], q_mdp[t])
        except ValueError as exc:
            raise ValueError(f"iteration {dual.nu}: {exc}") from exc

    return _map(one, range(cfg.horizon), cfg.workers)


def dual_update(dual: DualState, mdp_p, mdp_q, opf_p, opf_q, delta=None) -> DualState:
    """Move each price by ``delta`` times the injection mismatch (MDP minus OPF)."""
    delta = dual.delta if delta is None else delta
    lam_p = dual.lam_p + delta * (np.asarray(mdp_p) - np.asarray(opf_p))
    lam_q = dual.lam_q + delta * (np.asarray(mdp_q) - np.asarray(opf_q))
    return DualState(lam_p, lam_q, dual.delta, dual.nu + 1, list(dual.history))


def primal_objective(cfg: CoSimConfig, disp):
    """Dispatch costs under the base rewards plus tariffed losses at the MDP injections."""
    coupling = cfg.coupling()
    total = 0.0
    for spec, d in zip(cfg.ensembles, disp):
        total += objective_value(d.policy, d.dist, spec.Pbar, UtilitySchedule(spec.U, spec.gamma))
    P = np.stack([d.p for d in disp], axis=1)
    Q = np.stack([d.q for d in disp], axis=1)
    for t in range(cfg.horizon):
        total += cfg.tariff_at(t) * evaluate(cfg.network, t, coupling, P[t], Q[t])[0]
    return total


def dual_function(cfg: CoSimConfig, dual: DualState, disp=None):
    """Lagrangian dual value: ensemble optima plus OPF optima without the proximal term."""
    disp = disp if disp is not None else mdp_step(cfg, dual)
    z = np.zeros((cfg.horizon, len(cfg.ensembles)))
    opf = opf_step(cfg, dual, z, z, prox=0.0)
    return sum(d.value for d in disp) + sum(o.objective for o in opf)


@dataclass
class CoSimReport:
    converged: bool
    iterations: int
    dual: DualState
    dispatch: list
    opf: list
    trace: list

    @property
    def p(self):
        return np.stack([d.p for d in self.dispatch], axis=1)

    @property
    def q(self):
        return np.stack([d.q for d in self.dispatch], axis=1)

    @property
    def primal_residual(self):
        return self.trace[-1]["primal_residual"]

    @property
    def objective(self):
        return self.trace[-1]["primal_objective"]


TRACE_FIELDS = ("nu", "dual_change", "primal_residual", "mdp_objective", "opf_objective",
                "primal_objective", "dual_objective")


def run(cfg: CoSimConfig, record_dual=False) -> CoSimReport:
    """Iterate ensemble, network and price steps until prices and injections agree.

    Converged means the max-norm price change and the max-norm injection
    mismatch are both within ``tol``. ``record_dual`` also evaluates the dual
    function each iteration (needs strictly convex OPF steps, i.e. a positive tariff).
    """
    T, m = cfg.horizon, len(cfg.ensembles)
    dual = DualState.zeros(T, m, cfg.delta)
    trace = []
    converged = False
    for nu in range(1, cfg.max_iter + 1):
        dual.nu = nu
        disp = mdp_step(cfg, dual)
        p_mdp = np.stack([d.p for d in disp], axis=1)
        q_mdp = np.stack([d.q for d in disp], axis=1)
        opf = opf_step(cfg, dual, p_mdp, q_mdp)
        p_opf = np.stack([o.p for o in opf])
        q_opf = np.stack([o.q for o in opf])
        step = cfg.delta / nu if cfg.decay else cfg.delta
        new = dual_update(dual, p_mdp, q_mdp, p_opf, q_opf, step)
        change = float(max(np.abs(new.lam_p - dual.lam_p).max(), np.abs(new.lam_q - dual.lam_q).max()))
        resid = float(max(np.abs(p_mdp - p_opf).max(), np.abs(q_mdp - q_opf).max()))
        row = {
            "nu": nu,
            "dual_change": change,
            "primal_residual": resid,
            "mdp_objective": float(sum(d.value for d in disp)),
            "opf_objective": float(sum(o.objective for o in opf)),
            "primal_objective": primal_objective(cfg, disp),
            "dual_objective": dual_function(cfg, dual, disp) if record_dual else float("nan"),
        }
        trace.append(row)
        dual.history.append((change, resid))
        if change <= cfg.tol and resid <= cfg.tol:
            converged = True
            log.info("converged after %d iterations", nu)
            break
        new.history = dual.history
        dual = new
    if not converged:
        log.warning("no convergence within %d iterations", cfg.max_iter)
    return CoSimReport(converged, nu, dual, disp, opf, trace)


def write_trace(report: CoSimReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for row in report.trace:
            w.writerow([row["nu"]] + [repr(float(row[k])) for k in TRACE_FIELDS[1:]])


def write_dispatch(report: CoSimReport, cfg: CoSimConfig, path):
    names = cfg.network.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "p_mdp_kw", "q_mdp_kvar", "p_opf_kw", "q_opf_kvar", "lam_p", "lam_q"])
        for t in range(cfg.horizon):
            for j, spec in enumerate(cfg.ensembles):
                d, o = report.dispatch[j], report.opf[t]
                w.writerow([t, names[spec.bus], repr(float(d.p[t])), repr(float(d.q[t])),
                            repr(float(o.p[j])), repr(float(o.q[j])),
                            repr(float(report.dual.lam_p[t, j])), repr(float(report.dual.lam_q[t, j]))])
