"""Chance-constrained optimal power flow on a radial feeder (LinDistFlow).

Power quantities are in kW / kVAr and count consumption as positive. With
per-bus consumption ``P``, ``Q`` and the path matrix ``A`` (``A[l, b] = 1`` when
line ``l`` lies on the path from the substation to bus ``b``), the model is

    line flows        Fp = A P,  Fq = A Q
    squared voltage   v  = v0^2 - 2 (R P + X Q) / S,   R = A^T diag(r) A
    losses (kW)       sum_l r_l (Fp_l^2 + Fq_l^2) / (S v0^2)

with ``r``, ``x`` in per unit and ``S`` the base power in kVA. Gaussian
active-power forecast errors turn the voltage limits into deterministic
tightened bounds ``v_min^2 + k s_v <= v <= v_max^2 - k s_v`` with
``k = Phi^{-1}(1 - eps)``. No flow limits are imposed.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .qp import QPInfeasible, solve_qp


@dataclass(frozen=True)
class RadialNetwork:
    """A tree feeder. Line data are indexed by their downstream (child) bus.

    ``parent[b]`` is the upstream bus of ``b`` (``-1`` at the substation);
    ``r[b]``, ``x[b]`` are the impedances of the line feeding ``b``.
    ``load_p`` / ``load_q`` have shape ``(T, n_bus)`` or ``(n_bus,)``.
    """

    names: tuple
    parent: np.ndarray
    r: np.ndarray
    x: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    base_kva: float = 1000.0
    v0: float = 1.0

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        nb = len(parent)
        if len(self.names) != nb or len(set(self.names)) != nb:
            raise ValueError("bus names must be unique, one per bus")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1:
            raise ValueError("network is not a tree: exactly one substation bus required")
        # every bus must reach the root without revisiting a bus
        for b in range(nb):
            seen, k = set(), b
            while parent[k] >= 0:
                if k in seen:
                    raise ValueError("network is not a tree: cycle detected")
                seen.add(k)
                k = parent[k]
        for name in ("r", "x", "v_min", "v_max"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (nb,)).copy()
            object.__setattr__(self, name, arr)
        lp = np.atleast_1d(np.asarray(self.load_p, dtype=float))
        lq = np.atleast_1d(np.asarray(self.load_q, dtype=float))
        if lp.shape[-1] != nb or lq.shape[-1] != nb:
            raise ValueError("load arrays must have one column per bus")
        if np.any(self.v_min >= self.v_max):
            raise ValueError("voltage bounds must satisfy v_min < v_max")
        line = parent >= 0
        if np.any(self.r[line] < 0) or np.any(self.x[line] < 0):
            raise ValueError("line impedances must be nonnegative")
        if self.base_kva <= 0 or self.v0 <= 0:
            raise ValueError("base power and substation voltage must be positive")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "load_p", lp)
        object.__setattr__(self, "load_q", lq)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_lines(cls, buses, lines, substation, load_p, load_q, v_min=0.95, v_max=1.05,
                   base_kva=1000.0, v0=1.0):
        """Build from bus names and ``(from, to, r, x)`` line tuples in any orientation."""
        buses = list(buses)
        index = {b: i for i, b in enumerate(buses)}
        if substation not in index:
            raise ValueError(f"unknown substation bus {substation!r}")
        nb = len(buses)
        if len(lines) != nb - 1:
            raise ValueError("network is not a tree: need exactly n_bus - 1 lines")
        adj = {i: [] for i in range(nb)}
        for f, t, r, x in lines:
            if f not in index or t not in index:
                raise ValueError(f"line {f}-{t} references an unknown bus")
            adj[index[f]].append((index[t], r, x))
            adj[index[t]].append((index[f], r, x))
        parent = np.full(nb, -2)
        rr, xx = np.zeros(nb), np.zeros(nb)
        root = index[substation]
        parent[root] = -1
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for w, r, x in adj[u]:
                if parent[w] == -2:
                    parent[w], rr[w], xx[w] = u, r, x
                    queue.append(w)
        if np.any(parent == -2):
            raise ValueError("network is not a tree: some buses are disconnected")
        return cls(tuple(buses), parent, rr, xx, load_p, load_q, v_min, v_max, base_kva, v0)

    @property
    def n_bus(self):
        return len(self.parent)

    @property
    def root(self):
        return int(np.flatnonzero(self.parent < 0)[0])

    @property
    def horizon(self):
        return self.load_p.shape[0] if self.load_p.ndim == 2 else None

    def index(self, name):
        return self.names.index(name)

    def path_matrix(self):
        """``A[l, b] = 1`` when the line feeding bus ``l`` is on the substation-to-``b`` path."""
        nb = self.n_bus
        A = np.zeros((nb, nb))
        for b in range(nb):
            k = b
            while self.parent[k] >= 0:
                A[k, b] = 1.0
                k = self.parent[k]
        return A

    def sensitivities(self):
        A = self.path_matrix()
        return A, A.T @ (self.r[:, None] * A), A.T @ (self.x[:, None] * A)

    def loads_at(self, t):
        lp = self.load_p[t] if self.load_p.ndim == 2 else self.load_p
        lq = self.load_q[t] if self.load_q.ndim == 2 else self.load_q
        return lp, lq

    def to_dict(self):
        lines = [{"from": self.names[self.parent[b]], "to": self.names[b],
                  "r_pu": float(self.r[b]), "x_pu": float(self.x[b])}
                 for b in range(self.n_bus) if self.parent[b] >= 0]
        return {
            "base_kva": self.base_kva,
            "v0_pu": self.v0,
            "substation": self.names[self.root],
            "buses": [{"name": n, "v_min_pu": float(self.v_min[i]), "v_max_pu": float(self.v_max[i]),
                       "p_kw": self.load_p[..., i].tolist(), "q_kvar": self.load_q[..., i].tolist()}
                      for i, n in enumerate(self.names)],
            "lines": lines,
        }

    @classmethod
    def from_dict(cls, d):
        buses = [b["name"] for b in d["buses"]]
        lp = np.array([np.atleast_1d(b.get("p_kw", 0.0)) for b in d["buses"]], dtype=float).T
        lq = np.array([np.atleast_1d(b.get("q_kvar", 0.0)) for b in d["buses"]], dtype=float).T
        if lp.shape[0] == 1:
            lp, lq = lp[0], lq[0]
        lines = [(ln["from"], ln["to"], float(ln["r_pu"]), float(ln["x_pu"])) for ln in d["lines"]]
        return cls.from_lines(buses, lines, d["substation"], lp, lq,
                              [b.get("v_min_pu", 0.95) for b in d["buses"]],
                              [b.get("v_max_pu", 1.05) for b in d["buses"]],
                              float(d.get("base_kva", 1000.0)), float(d.get("v0_pu", 1.0)))


def load_network(path):
    """Read a network from a JSON document (see ``RadialNetwork.to_dict``)."""
    return RadialNetwork.from_dict(json.loads(Path(path).read_text()))


def save_network(net: RadialNetwork, path):
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


def _read_commented_csv(path):
    meta, rows = {}, []
    with Path(path).open(newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = float(v)
            elif line.strip():
                lines.append(line)
        rows = list(csv.DictReader(lines))
    return meta, rows


def load_network_csv(buses_path, lines_path):
    """Read a bus/line CSV pair.

    ``buses.csv``: optional ``# base_kva=..., v0_pu=...`` comment line, then the
    header ``name,v_min_pu,v_max_pu,p_kw,q_kvar``; the first bus is the
    substation. ``lines.csv``: header ``from,to,r_pu,x_pu``.
    """
    meta, brows = _read_commented_csv(buses_path)
    _, lrows = _read_commented_csv(lines_path)
    if not brows:
        raise ValueError("bus file has no rows")
    try:
        names = [r["name"] for r in brows]
        lp = [float(r["p_kw"]) for r in brows]
        lq = [float(r["q_kvar"]) for r in brows]
        vmin = [float(r["v_min_pu"]) for r in brows]
        vmax = [float(r["v_max_pu"]) for r in brows]
        lines = [(r["from"], r["to"], float(r["r_pu"]), float(r["x_pu"])) for r in lrows]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed network CSV: {exc}") from exc
    return RadialNetwork.from_lines(names, lines, names[0], lp, lq, vmin, vmax,
                                    meta.get("base_kva", 1000.0), meta.get("v0_pu", 1.0))


def four_bus_feeder(load_kw=(0.0, 150.0, 250.0, 250.0), load_kvar=(0.0, 50.0, 80.0, 80.0),
                    r=0.02, x=0.04, base_kva=1000.0, horizon=None):
    """Substation A feeding B, with C and D both hanging off B."""
    lp, lq = np.asarray(load_kw, float), np.asarray(load_kvar, float)
    if horizon is not None:
        lp, lq = np.tile(lp, (horizon, 1)), np.tile(lq, (horizon, 1))
    lines = [("A", "B", r, x), ("B", "C", r, x), ("B", "D", r, x)]
    return RadialNetwork.from_lines("ABCD", lines, "A", lp, lq, base_kva=base_kva)


@dataclass(frozen=True)
class UncertainInjection:
    """Zero-mean Gaussian active-power forecast errors per bus (kW) and the violation budget."""

    sigma_kw: np.ndarray
    eps: float = 0.05

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_kw, dtype=float))
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("forecast-error standard deviations must be finite and nonnegative")
        if not 0 < self.eps < 0.5:
            raise ValueError("violation budget must lie in (0, 0.5)")
        object.__setattr__(self, "sigma_kw", s)

    def sigma_at(self, t, n_bus):
        s = self.sigma_kw[t] if self.sigma_kw.ndim == 2 else self.sigma_kw
        return np.broadcast_to(s, (n_bus,))

    @property
    def kappa(self):
        return stats.norm_ppf(1.0 - self.eps)


@dataclass(frozen=True)
class Coupling:
    """Buses hosting controllable ensembles and their dispatch ranges (kW, kVAr)."""

    buses: tuple
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray = None
    q_max: np.ndarray = None

    def __post_init__(self):
        m = len(self.buses)
        if len(set(self.buses)) != m:
            raise ValueError("each bus may host at most one coupled ensemble")
        for name in ("p_min", "p_max", "q_min", "q_max"):
            v = getattr(self, name)
            v = np.zeros(m) if v is None else np.broadcast_to(np.asarray(v, float), (m,)).copy()
            object.__setattr__(self, name, v)
        if np.any(self.p_min > self.p_max) or np.any(self.q_min > self.q_max):
            raise ValueError("dispatch ranges must satisfy min <= max")
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))

    @property
    def m(self):
        return len(self.buses)

    def selector(self, n_bus):
        E = np.zeros((n_bus, self.m))
        E[list(self.buses), np.arange(self.m)] = 1.0
        return E


@dataclass
class OpfDecision:
    t: int
    p: np.ndarray
    q: np.ndarray
    bus_p: np.ndarray
    bus_q: np.ndarray
    v: np.ndarray
    flow_p: np.ndarray
    flow_q: np.ndarray
    loss_kw: float
    objective: float
    mult_p: np.ndarray
    mult_q: np.ndarray
    margin: np.ndarray
    kkt_residual: float
    binding: list = field(default_factory=list)


def voltage_margin(net: RadialNetwork, unc: UncertainInjection | None, t):
    """Tightening ``k * s_v`` on the squared voltage at every bus."""
    if unc is None:
        return np.zeros(net.n_bus)
    _, R, _ = net.sensitivities()
    sig = unc.sigma_at(t, net.n_bus)
    s_v = 2.0 / net.base_kva * np.sqrt((R ** 2) @ (sig ** 2))
    return unc.kappa * s_v


def _tightened_bounds(net, margin):
    lo = net.v_min ** 2 + margin
    hi = net.v_max ** 2 - margin
    bad = [net.names[b] for b in range(net.n_bus) if b != net.root and lo[b] > hi[b]]
    if bad:
        raise ValueError(f"chance constraints infeasible: tightening exceeds the voltage band at {bad}")
    return lo, hi


def _box_and_equalities(coupling, var_lo, var_hi):
    """Box constraints as inequalities; zero-width ranges become equalities."""
    k = len(var_lo)
    fixed = np.isclose(var_lo, var_hi, rtol=0.0, atol=1e-12)
    I = np.eye(k)
    A_eq, b_eq = I[fixed], var_lo[fixed]
    free = ~fixed
    A_in = np.vstack([I[free], -I[free]])
    b_in = np.concatenate([var_hi[free], -var_lo[free]])
    return A_eq, b_eq, A_in, b_in


def _prices(coupling, lam_p, lam_q, ref_p, ref_q):
    m = coupling.m
    z = np.zeros(m)
    lam_p = z if lam_p is None else np.asarray(lam_p, float)
    lam_q = z if lam_q is None else np.asarray(lam_q, float)
    ref_p = z if ref_p is None else np.asarray(ref_p, float)
    ref_q = z if ref_q is None else np.asarray(ref_q, float)
    return lam_p, lam_q, ref_p, ref_q


def solve_ccopf(net: RadialNetwork, unc: UncertainInjection | None, t: int = 0,
                coupling: Coupling | None = None, lam_p=None, lam_q=None, tariff: float = 1.0,
                prox: float = 0.0, ref_p=None, ref_q=None, extra_p=None, extra_q=None) -> OpfDecision:
    """Utility subproblem at time ``t``.

    Minimises ``tariff * losses - lam_p . p - lam_q . q + prox/2 ||(p, q) - ref||^2``
    over ensemble consumptions ``p``, ``q`` inside their dispatch ranges, subject
    to the tightened voltage limits. ``extra_p`` / ``extra_q`` add fixed
    consumption per bus. ``mult_p[b]`` is the marginal change of the optimum
    per kW of extra consumption at bus ``b``.
    """
    coupling = coupling or Coupling((), [], [])
    nb, m, S = net.n_bus, coupling.m, net.base_kva
    lam_p, lam_q, ref_p, ref_q = _prices(coupling, lam_p, lam_q, ref_p, ref_q)
    A, R, X = net.sensitivities()
    E = coupling.selector(nb)
    lp, lq = net.loads_at(t)
    base_p = lp + (0.0 if extra_p is None else np.asarray(extra_p, float))
    base_q = lq + (0.0 if extra_q is None else np.asarray(extra_q, float))
    margin = voltage_margin(net, unc, t)
    lo, hi = _tightened_bounds(net, margin)

    c = tariff / (S * net.v0 ** 2)
    AE = A @ E
    Hb = 2.0 * c * AE.T @ (net.r[:, None] * AE)
    H = np.block([[Hb, np.zeros((m, m))], [np.zeros((m, m)), Hb]]) + prox * np.eye(2 * m)
    Fp0, Fq0 = A @ base_p, A @ base_q
    g = np.concatenate([2.0 * c * AE.T @ (net.r * Fp0) - lam_p - prox * ref_p,
                        2.0 * c * AE.T @ (net.r * Fq0) - lam_q - prox * ref_q])
    const = c * float(net.r @ (Fp0 ** 2 + Fq0 ** 2)) + 0.5 * prox * float(ref_p @ ref_p + ref_q @ ref_q)

    # v = v_base + Gv @ [p; q]
    v_base = net.v0 ** 2 - 2.0 * (R @ base_p + X @ base_q) / S
    Gv = -2.0 * np.hstack([R @ E, X @ E]) / S
    keep = np.array([b != net.root for b in range(nb)])
    Gk = Gv[keep]
    A_volt = np.vstack([Gk, -Gk])
    b_volt = np.concatenate([hi[keep] - v_base[keep], v_base[keep] - lo[keep]])

    var_lo = np.concatenate([coupling.p_min, coupling.q_min])
    var_hi = np.concatenate([coupling.p_max, coupling.q_max])
    A_eq, b_eq, A_box, b_box = _box_and_equalities(coupling, var_lo, var_hi)
    A_in = np.vstack([A_volt, A_box])
    b_in = np.concatenate([b_volt, b_box])

    if m == 0:
        xsol, y_in, kkt = np.zeros(0), np.zeros(len(b_in)), 0.0
        if np.any(b_volt < -1e-12):
            raise ValueError(f"chance constraints infeasible at t={t}: fixed loads violate the tightened band")
    else:
        try:
            res = solve_qp(H, g, A_eq, b_eq, A_in, b_in)
        except QPInfeasible as exc:
            raise ValueError(f"chance constraints infeasible at t={t}") from exc
        xsol, y_in, kkt = res.x, res.y_in, res.kkt_residual
    p, q = xsol[:m], xsol[m:]
    bus_p, bus_q = base_p + E @ p, base_q + E @ q
    Fp, Fq = A @ bus_p, A @ bus_q
    v = net.v0 ** 2 - 2.0 * (R @ bus_p + X @ bus_q) / S
    loss = float(net.r @ (Fp ** 2 + Fq ** 2)) / (S * net.v0 ** 2)
    obj = float(0.5 * xsol @ H @ xsol + g @ xsol + const) if m else tariff * loss

    # envelope theorem: d obj / d extra_b = tariff * d loss / dP_b + sum_i y_i d c_i / dP_b
    y_up, y_lo = y_in[: keep.sum()], y_in[keep.sum(): 2 * keep.sum()]
    dv_dp, dv_dq = -2.0 * R[keep] / S, -2.0 * X[keep] / S
    mult_p = 2.0 * c * A.T @ (net.r * Fp) + (y_up - y_lo) @ dv_dp
    mult_q = 2.0 * c * A.T @ (net.r * Fq) + (y_up - y_lo) @ dv_dq
    names = [net.names[b] for b in np.flatnonzero(keep)]
    binding = [(names[i], "upper") for i in np.flatnonzero(y_up > 1e-10)]
    binding += [(names[i], "lower") for i in np.flatnonzero(y_lo > 1e-10)]
    return OpfDecision(t, p, q, bus_p, bus_q, v, Fp, Fq, loss, obj, mult_p, mult_q, margin, kkt, binding)


def solve_opf_branch_flow(net: RadialNetwork, t: int = 0, coupling: Coupling | None = None,
                          lam_p=None, lam_q=None, tariff: float = 1.0, prox: float = 0.0,
                          ref_p=None, ref_q=None, margin=None) -> OpfDecision:
    """Same problem posed over explicit line flows with nodal balance equalities.

    Deterministic unless a precomputed ``margin`` is supplied. Multipliers come
    from the balance-constraint duals, independently of ``solve_ccopf``.
    """
    coupling = coupling or Coupling((), [], [])
    nb, m, S = net.n_bus, coupling.m, net.base_kva
    lam_p, lam_q, ref_p, ref_q = _prices(coupling, lam_p, lam_q, ref_p, ref_q)
    margin = np.zeros(nb) if margin is None else np.asarray(margin, float)
    lo, hi = _tightened_bounds(net, margin)
    lp, lq = net.loads_at(t)
    lines = [b for b in range(nb) if b != net.root]
    L = len(lines)
    col = {b: i for i, b in enumerate(lines)}
    # variables: p (m), q (m), Fp (L), Fq (L)
    nv = 2 * m + 2 * L
    ip, iq, ifp, ifq = 0, m, 2 * m, 2 * m + L
    c = tariff / (S * net.v0 ** 2)
    H = np.zeros((nv, nv))
    H[ifp:ifp + L, ifp:ifp + L] = np.diag(2.0 * c * net.r[lines])
    H[ifq:ifq + L, ifq:ifq + L] = np.diag(2.0 * c * net.r[lines])
    H[:2 * m, :2 * m] += prox * np.eye(2 * m)
    g = np.zeros(nv)
    g[ip:ip + m] = -lam_p - prox * ref_p
    g[iq:iq + m] = -lam_q - prox * ref_q
    const = 0.5 * prox * float(ref_p @ ref_p + ref_q @ ref_q)

    # balance at each non-root bus b: F_b - sum_children F_c - ensemble_b = load_b
    A_eq = np.zeros((2 * L, nv))
    b_eq = np.zeros(2 * L)
    where = {b: j for j, b in enumerate(coupling.buses)}
    for b in lines:
        i = col[b]
        for off, fvar, evar, load in ((0, ifp, ip, lp), (L, ifq, iq, lq)):
            A_eq[off + i, fvar + i] = 1.0
            for ch in np.flatnonzero(net.parent == b):
                A_eq[off + i, fvar + col[ch]] = -1.0
            if b in where:
                A_eq[off + i, evar + where[b]] = -1.0
            b_eq[off + i] = load[b]
    # v_b = v0^2 - 2/S sum_{path lines} (r Fp + x Fq)
    Vg = np.zeros((L, nv))
    for b in lines:
        k = b
        while net.parent[k] >= 0:
            Vg[col[b], ifp + col[k]] = -2.0 * net.r[k] / S
            Vg[col[b], ifq + col[k]] = -2.0 * net.x[k] / S
            k = net.parent[k]
    v0sq = net.v0 ** 2
    A_in = [Vg, -Vg]
    b_in = [hi[lines] - v0sq, v0sq - lo[lines]]
    var_lo = np.concatenate([coupling.p_min, coupling.q_min])
    var_hi = np.concatenate([coupling.p_max, coupling.q_max])
    Be, be, Bi, bi = _box_and_equalities(coupling, var_lo, var_hi)
    pad = lambda M: np.hstack([M, np.zeros((M.shape[0], nv - 2 * m))])
    A_eq = np.vstack([A_eq, pad(Be)])
    b_eq = np.concatenate([b_eq, be])
    A_in = np.vstack(A_in + [pad(Bi)])
    b_in = np.concatenate(b_in + [bi])
    try:
        res = solve_qp(H, g, A_eq, b_eq, A_in, b_in)
    except QPInfeasible as exc:
        raise ValueError(f"chance constraints infeasible at t={t}") from exc
    xs = res.x
    p, q = xs[ip:ip + m], xs[iq:iq + m]
    Fp = np.zeros(nb)
    Fq = np.zeros(nb)
    Fp[lines], Fq[lines] = xs[ifp:ifp + L], xs[ifq:ifq + L]
    v = np.full(nb, v0sq)
    v[lines] = v0sq + Vg[:, ifp:] @ xs[ifp:]
    E = coupling.selector(nb)
    bus_p, bus_q = lp + E @ p, lq + E @ q
    loss = float(net.r @ (Fp ** 2 + Fq ** 2)) / (S * v0sq)
    obj = float(0.5 * xs @ H @ xs + g @ xs + const)
    mult_p, mult_q = np.zeros(nb), np.zeros(nb)
    mult_p[lines] = -res.y_eq[:L]
    mult_q[lines] = -res.y_eq[L:2 * L]
    return OpfDecision(t, p, q, bus_p, bus_q, v, Fp, Fq, loss, obj, mult_p, mult_q, margin,
                       res.kkt_residual)


def voltage_violation(net: RadialNetwork, unc: UncertainInjection, dec: OpfDecision,
                      n_draws: int = 10_000, seed=None):
    """Monte Carlo voltage-violation rates under the forecast-error model.

    Returns ``(per_constraint, any_violation)`` where ``per_constraint`` has shape
    ``(n_bus, 2)`` for the lower and upper limit of each bus.
    """
    rng = np.random.default_rng(seed)
    _, R, _ = net.sensitivities()
    sig = unc.sigma_at(dec.t, net.n_bus)
    w = rng.standard_normal((n_draws, net.n_bus)) * sig
    v = dec.v[None, :] - 2.0 * (w @ R.T) / net.base_kva
    low = v < net.v_min ** 2
    high = v > net.v_max ** 2
    low[:, net.root] = high[:, net.root] = False
    per = np.stack([low.mean(axis=0), high.mean(axis=0)], axis=1)
    return per, float((low | high).any(axis=1).mean())


def evaluate(net: RadialNetwork, t, coupling: Coupling, p, q=None):
    """Losses (kW) and squared voltages for given ensemble consumptions at time ``t``."""
    E = coupling.selector(net.n_bus)
    q = np.zeros(coupling.m) if q is None else np.asarray(q, float)
    lp, lq = net.loads_at(t)
    P, Q = lp + E @ np.asarray(p, float), lq + E @ q
    A, R, X = net.sensitivities()
    Fp, Fq = A @ P, A @ Q
    loss = float(net.r @ (Fp ** 2 + Fq ** 2)) / (net.base_kva * net.v0 ** 2)
    v = net.v0 ** 2 - 2.0 * (R @ P + X @ Q) / net.base_kva
    return loss, v
