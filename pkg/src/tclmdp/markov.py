"""Markov-process models of TCL ensembles built from power trajectories.

Transition matrices are column-stochastic throughout the package:
``P[a, b]`` is the probability of moving from state ``b`` to state ``a``.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMN_TOL = 1e-12
STATIONARY_TOL = 1e-10
STATIONARY_MAXITER = 100_000
DEFAULT_START = np.datetime64("2016-01-01T00:00:00", "s")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled power consumption.

    ``gaps`` lists sample indices ``i`` such that the interval between samples
    ``i - 1`` and ``i`` spans more than one sampling period. Transition counting
    skips those pairs.
    """

    timestamps: np.ndarray
    active_kw: np.ndarray
    reactive_kvar: np.ndarray | None = None
    period_s: float = 3600.0
    gaps: tuple[int, ...] = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps).astype("datetime64[s]")
        p = np.asarray(self.active_kw, dtype=float)
        if ts.shape != p.shape or p.ndim != 1:
            raise ValueError("timestamps and active power must be 1-D arrays of equal length")
        if len(ts) > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "s")):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "active_kw", p)
        if self.reactive_kvar is not None:
            q = np.asarray(self.reactive_kvar, dtype=float)
            if q.shape != p.shape:
                raise ValueError("reactive power length does not match active power")
            object.__setattr__(self, "reactive_kvar", q)
        if self.period_s <= 0:
            raise ValueError("sampling period must be positive")

    def __len__(self):
        return len(self.active_kw)

    @classmethod
    def from_power(cls, active_kw, period_s=3600.0, reactive_kvar=None, start=DEFAULT_START):
        n = len(active_kw)
        ts = np.datetime64(start, "s") + np.arange(n) * np.timedelta64(int(round(period_s)), "s")
        return cls(ts, active_kw, reactive_kvar, period_s)

    def pair_mask(self):
        """Boolean mask over consecutive pairs ``(i, i + 1)`` that are contiguous."""
        mask = np.ones(max(len(self) - 1, 0), dtype=bool)
        for g in self.gaps:
            mask[g - 1] = False
        return mask


@dataclass(frozen=True)
class StateSpace:
    """Ordered power states with their bins and rated powers.

    Bin ``a`` is ``[lower[a], upper[a])``, the last bin is closed on the right.
    """

    lower: np.ndarray
    upper: np.ndarray
    p: np.ndarray
    q: np.ndarray = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        p = np.asarray(self.p, dtype=float)
        q = np.zeros_like(p) if self.q is None else np.asarray(self.q, dtype=float)
        if not (lower.shape == upper.shape == p.shape == q.shape) or lower.ndim != 1:
            raise ValueError("state fields must be 1-D arrays of equal length")
        if len(p) < 2:
            raise ValueError("a state space needs at least 2 states")
        if np.any(upper <= lower) or np.any(np.diff(lower) <= 0):
            raise ValueError("bins must be strictly ordered with positive width")
        if not np.allclose(upper[:-1], lower[1:], rtol=0, atol=1e-12 * max(1.0, np.abs(upper).max())):
            raise ValueError("bins must be contiguous")
        if np.any(p < lower - 1e-9) or np.any(p > upper + 1e-9):
            raise ValueError("rated power must lie within its own bin")
        for name, arr in (("lower", lower), ("upper", upper), ("p", p), ("q", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return len(self.p)

    @property
    def edges(self):
        return np.append(self.lower, self.upper[-1])

    @classmethod
    def from_levels(cls, p, q=None):
        """State space whose bins are centred between the given rated powers."""
        p = np.asarray(p, dtype=float)
        mids = 0.5 * (p[1:] + p[:-1])
        lo_edge = p[0] - (mids[0] - p[0]) if len(p) > 1 else p[0] - 0.5
        hi_edge = p[-1] + (p[-1] - mids[-1]) if len(p) > 1 else p[-1] + 0.5
        lower = np.concatenate([[lo_edge], mids])
        upper = np.concatenate([mids, [hi_edge]])
        return cls(lower, upper, p, q)

    def assign(self, power):
        """Map power samples to state indices; raises if a sample falls outside all bins."""
        power = np.asarray(power, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.upper[-1]))
        if np.any(power < self.lower[0] - tol) or np.any(power > self.upper[-1] + tol):
            raise ValueError("power sample outside the state space dispatch range")
        idx = np.searchsorted(self.lower[1:], power, side="right")
        return idx.astype(int)

    def to_dict(self):
        return {
            "lower_kw": self.lower.tolist(),
            "upper_kw": self.upper.tolist(),
            "p_kw": self.p.tolist(),
            "q_kvar": self.q.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower_kw"], d["upper_kw"], d["p_kw"], d.get("q_kvar"))


def check_stochastic(P, tol=COLUMN_TOL):
    """Validate a column-stochastic matrix (or a stack of them) and return it as an array."""
    P = np.asarray(P, dtype=float)
    if P.ndim not in (2, 3) or P.shape[-1] != P.shape[-2]:
        raise ValueError("transition matrix must be square (or a stack of square matrices)")
    if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
        raise ValueError("transition probabilities must lie in [0, 1]")
    err = np.abs(P.sum(axis=-2) - 1.0).max()
    if err > tol:
        raise ValueError(f"columns must sum to 1 (max deviation {err:.3e})")
    return P


def normalize_columns(W):
    """Scale each column of a nonnegative matrix to sum to one."""
    W = np.asarray(W, dtype=float)
    s = W.sum(axis=-2, keepdims=True)
    P = W / s
    # one correction pass absorbs the residual rounding of the division
    P /= P.sum(axis=-2, keepdims=True)
    return P


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic transition matrix, ``P[dest, origin]``."""

    P: np.ndarray

    def __post_init__(self):
        P = check_stochastic(self.P)
        if P.ndim != 2:
            raise ValueError("TransitionMatrix holds a single matrix")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def n(self):
        return self.P.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.P, dtype=dtype)


def discretize(traj: Trajectory, n_states: int, scheme: str = "uniform") -> StateSpace:
    """Split the observed power range into ``n_states`` ordered bins.

    ``uniform`` gives equal-width bins and ``quantile`` equal-count bins. The
    rated power of a state is the mean of the samples falling in its bin (the
    bin midpoint if the bin is empty); rated reactive power likewise.
    """
    if n_states < 2:
        raise ValueError("n_states must be at least 2")
    p = traj.active_kw
    if len(p) == 0:
        raise ValueError("trajectory is empty")
    lo, hi = float(p.min()), float(p.max())
    if hi <= lo:
        raise ValueError("dispatch range is empty")
    if len(np.unique(p)) < n_states:
        raise ValueError(f"trajectory has fewer than {n_states} distinct power values")
    if scheme == "uniform":
        edges = np.linspace(lo, hi, n_states + 1)
    elif scheme == "quantile":
        edges = np.quantile(p, np.linspace(0.0, 1.0, n_states + 1))
        edges[0], edges[-1] = lo, hi
        if np.any(np.diff(edges) <= 0):
            raise ValueError("quantile binning produced empty bins; use fewer states")
    else:
        raise ValueError(f"unknown discretization scheme {scheme!r}")
    idx = np.clip(np.searchsorted(edges[1:-1], p, side="right"), 0, n_states - 1)
    counts = np.bincount(idx, minlength=n_states)
    mids = 0.5 * (edges[1:] + edges[:-1])
    sums = np.bincount(idx, weights=p, minlength=n_states)
    rated_p = np.where(counts > 0, sums / np.maximum(counts, 1), mids)
    if traj.reactive_kvar is not None:
        qsums = np.bincount(idx, weights=traj.reactive_kvar, minlength=n_states)
        rated_q = np.where(counts > 0, qsums / np.maximum(counts, 1), 0.0)
    else:
        rated_q = np.zeros(n_states)
    rated_p = np.clip(rated_p, edges[:-1], edges[1:])
    return StateSpace(edges[:-1], edges[1:], rated_p, rated_q)


def count_transitions(states, n, mask=None):
    """Count matrix ``C[a, b]`` of observed moves ``b -> a``."""
    states = np.asarray(states, dtype=int)
    C = np.zeros((n, n))
    if len(states) < 2:
        return C
    origin, dest = states[:-1], states[1:]
    if mask is not None:
        origin, dest = origin[mask], dest[mask]
    np.add.at(C, (dest, origin), 1.0)
    return C


def transitions_from_counts(C):
    C = np.asarray(C, dtype=float)
    departures = C.sum(axis=0)
    P = np.where(departures > 0, C / np.where(departures > 0, departures, 1.0), 0.0)
    empty = departures == 0
    # states never left keep their mass
    P[np.flatnonzero(empty), np.flatnonzero(empty)] = 1.0
    return TransitionMatrix(normalize_columns(P))


def estimate_transitions(traj: Trajectory, ss: StateSpace) -> TransitionMatrix:
    """Empirical transition matrix by counting consecutive-sample moves."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    states = ss.assign(traj.active_kw)
    return transitions_from_counts(count_transitions(states, ss.n, traj.pair_mask()))


def estimate_from_states(states, n) -> TransitionMatrix:
    return transitions_from_counts(count_transitions(states, n))


def simulate(P, start_state: int, T: int, seed=None) -> np.ndarray:
    """Sample a state sequence of length ``T`` starting in ``start_state``.

    ``P`` may be a single matrix or a stack ``(T-1, n, n)`` of per-step matrices.
    """
    P = check_stochastic(np.asarray(P))
    n = P.shape[-1]
    if not 0 <= start_state < n:
        raise ValueError("start state out of range")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(P, axis=-2)
    cum[..., -1, :] = 1.0
    u = rng.random(max(T - 1, 0))
    out = np.empty(T, dtype=int)
    if T == 0:
        return out
    out[0] = s = start_state
    if cum.ndim == 2:
        cols = [cum[:, b].tolist() for b in range(n)]
        for k in range(1, T):
            s = bisect_right(cols[s], u[k - 1])
            out[k] = s if s < n else n - 1
            s = out[k]
    else:
        for k in range(1, T):
            s = int(np.searchsorted(cum[k - 1, :, s], u[k - 1], side="right"))
            s = min(s, n - 1)
            out[k] = s
    return out


def _closed_classes(P):
    """Strongly connected components that no transition leaves."""
    from scipy.sparse.csgraph import connected_components

    adj = (P.T > 0).astype(int)  # adj[b, a]: edge b -> a
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(len(P)), members)
        if not np.any(adj[np.ix_(members, outside)]):
            closed.append(members)
    return closed


def period(P, members):
    """Period of a communicating class (gcd of cycle lengths) via BFS levels."""
    members = list(members)
    sub = np.asarray(P)[np.ix_(members, members)]
    level = {0: 0}
    frontier = [0]
    g = 0
    while frontier:
        nxt = []
        for b in frontier:
            for a in np.flatnonzero(sub[:, b] > 0):
                a = int(a)
                if a not in level:
                    level[a] = level[b] + 1
                    nxt.append(a)
                else:
                    g = math.gcd(g, level[b] + 1 - level[a])
        frontier = nxt
    return abs(g) if g else 0


def stationary_distribution(P, tol=STATIONARY_TOL, maxiter=STATIONARY_MAXITER):
    """Stationary distribution by power iteration.

    Returns ``(pi, status)`` where ``status`` is ``"unique"`` or ``"non-unique"``;
    ``pi`` is ``None`` when the chain has several closed classes or is periodic.
    """
    P = check_stochastic(np.asarray(P))
    closed = _closed_classes(P)
    if len(closed) != 1 or period(P, closed[0]) != 1:
        return None, "non-unique"
    pi = np.full(len(P), 1.0 / len(P))
    for _ in range(maxiter):
        nxt = P @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt, "unique"
        pi = nxt
    return pi, "unique"


@dataclass
class ValidationReport:
    status: str
    distance: float | None
    occupancy: np.ndarray
    departures: np.ndarray
    stationary: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "status": self.status,
            "tv_distance": self.distance,
            "occupancy": self.occupancy.tolist(),
            "departures": self.departures.tolist(),
            "stationary": None if self.stationary is None else self.stationary.tolist(),
            "notes": list(self.notes),
        }


def validate(P, traj: Trajectory, ss: StateSpace) -> ValidationReport:
    """Compare the empirical occupancy of ``traj`` with the stationary law of ``P``."""
    P = np.asarray(P, dtype=float)
    if P.shape != (ss.n, ss.n):
        raise ValueError("matrix and state space sizes differ")
    states = ss.assign(traj.active_kw)
    occupancy = np.bincount(states, minlength=ss.n) / len(states)
    departures = count_transitions(states, ss.n, traj.pair_mask()).sum(axis=0)
    pi, status = stationary_distribution(P)
    if pi is None:
        return ValidationReport(status, None, occupancy, departures, None,
                                ["chain is reducible or periodic; distance omitted"])
    distance = 0.5 * float(np.abs(pi - occupancy).sum())
    return ValidationReport(status, distance, occupancy, departures, pi)


def write_matrix(path, P, ss: StateSpace | None = None, extra=None):
    """Write ``P`` as a row-major CSV plus a JSON sidecar with the state bins."""
    path = Path(path)
    P = np.asarray(P, dtype=float)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in P:
            w.writerow([repr(float(v)) for v in row])
    meta = {"n_states": int(P.shape[0]), "convention": "P[dest, origin], columns sum to 1"}
    if ss is not None:
        meta["states"] = ss.to_dict()
    if extra:
        meta.update(extra)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_matrix(path):
    path = Path(path)
    with path.open() as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    P = np.array(rows)
    sidecar = path.with_suffix(".json")
    ss = None
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if "states" in meta:
            ss = StateSpace.from_dict(meta["states"])
    return TransitionMatrix(P), ss
