"""Synthetic TCL ensembles (first-order thermal model) and trajectory CSV I/O.

Each unit follows

    T_{k+1} = T_k + dt * (-(T_k - T_out) / (R C) + sign * s_k * cop * P / C + solar / C)

with ``dt`` in hours, ``R`` in degC/kW, ``C`` in kWh/degC and ``sign`` +1 for
heating, -1 for cooling. The thermostat switches ``s_k`` at the deadband edges
``T_set -/+ deadband`` and otherwise holds its state.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .markov import DEFAULT_START, Trajectory


@dataclass(frozen=True)
class TclModel:
    R: float = 2.0
    C: float = 10.0
    P: float = 5.0
    cop: float = 2.5
    t_set: float = 20.0
    deadband: float = 0.5
    mode: str = "heating"
    power_factor: float = 1.0

    def __post_init__(self):
        if min(self.R, self.C, self.P, self.deadband, self.cop) <= 0:
            raise ValueError("R, C, P, cop and deadband must be positive")
        if self.mode not in ("heating", "cooling"):
            raise ValueError("mode must be 'heating' or 'cooling'")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")

    @property
    def sign(self):
        return 1.0 if self.mode == "heating" else -1.0

    def duty_cycle(self, t_out, solar=0.0):
        """Steady-state on-fraction from the heat balance, clipped to ``[0, 1]``."""
        need = self.sign * ((self.t_set - t_out) / self.R - solar)
        return float(np.clip(need / (self.cop * self.P), 0.0, 1.0))


@dataclass(frozen=True)
class WeatherSeries:
    temp_c: np.ndarray
    period_s: float = 60.0
    solar_kw: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "temp_c", np.atleast_1d(np.asarray(self.temp_c, dtype=float)))
        if self.solar_kw is not None:
            s = np.broadcast_to(np.asarray(self.solar_kw, dtype=float), self.temp_c.shape)
            object.__setattr__(self, "solar_kw", s)

    @classmethod
    def constant(cls, temp_c, steps, period_s=60.0):
        return cls(np.full(steps, float(temp_c)), period_s)

    def at(self, k):
        k = min(k, len(self.temp_c) - 1)
        solar = 0.0 if self.solar_kw is None else self.solar_kw[k]
        return self.temp_c[k], solar


@dataclass
class EnsembleRun:
    trajectory: Trajectory
    temps: np.ndarray
    on: np.ndarray
    params: dict


def max_step_change(R, C, P, cop, t_set, deadband, weather: WeatherSeries, dt_h):
    edges = np.concatenate([t_set - deadband, t_set + deadband])
    spread = np.max(np.abs(edges[:, None] - weather.temp_c[None, :]))
    solar = 0.0 if weather.solar_kw is None else np.max(np.abs(weather.solar_kw))
    return float(np.max(dt_h * (spread / (R * C) + (cop * P + solar) / C)))


def simulate_ensemble(models, weather: WeatherSeries, T: int, dt_s: float, seed=None,
                      heterogeneity: float = 0.1, initial_temps=None, initial_on=None,
                      start=DEFAULT_START) -> EnsembleRun:
    """Simulate the units for ``T`` steps of ``dt_s`` seconds.

    ``models`` is one ``TclModel`` per unit (or a single model with ``N`` given
    as ``(model, N)``). ``R``, ``C`` and ``P`` are scaled by independent uniform
    factors in ``[1 - heterogeneity, 1 + heterogeneity]``; initial temperatures
    are uniform in the deadband and the initial switch state is random unless given.
    """
    if isinstance(models, tuple) and len(models) == 2 and isinstance(models[0], TclModel):
        models = [models[0]] * int(models[1])
    models = list(models)
    if not models:
        raise ValueError("no units to simulate")
    if abs(weather.period_s - dt_s) > 1e-9 and len(weather.temp_c) > 1:
        raise ValueError("weather sampling period differs from the simulation step")
    N = len(models)
    rng = np.random.default_rng(seed)
    h = heterogeneity
    f = rng.uniform(1 - h, 1 + h, size=(3, N)) if h > 0 else np.ones((3, N))
    R = np.array([m.R for m in models]) * f[0]
    C = np.array([m.C for m in models]) * f[1]
    P = np.array([m.P for m in models]) * f[2]
    cop = np.array([m.cop for m in models])
    sign = np.array([m.sign for m in models])
    t_set = np.array([m.t_set for m in models])
    band = np.array([m.deadband for m in models])
    tan_phi = np.array([math.tan(math.acos(m.power_factor)) for m in models])
    dt_h = dt_s / 3600.0
    worst = max_step_change(R, C, P, cop, t_set, band, weather, dt_h)
    if worst >= band.min():
        suggested = dt_s * 0.5 * band.min() / worst
        raise ValueError(f"dt too coarse: temperature may move {worst:.3g} degC per step, "
                         f"more than the deadband; use dt <= {suggested:.3g} s")
    if initial_temps is None:
        temp = t_set + rng.uniform(-1.0, 1.0, size=N) * band
    else:
        temp = np.broadcast_to(np.asarray(initial_temps, dtype=float), (N,)).copy()
    if initial_on is None:
        on = rng.random(N) < 0.5
    else:
        on = np.broadcast_to(np.asarray(initial_on, dtype=bool), (N,)).copy()
    temps = np.empty((T + 1, N))
    states = np.empty((T, N), dtype=bool)
    temps[0] = temp
    for k in range(T):
        # thermostat with hysteresis; sign flips the edges for cooling
        need_on = sign * (temp - (t_set - sign * band)) < 0
        need_off = sign * (temp - (t_set + sign * band)) > 0
        on = (on | need_on) & ~need_off
        states[k] = on
        t_out, solar = weather.at(k)
        temp = temp + dt_h * (-(temp - t_out) / (R * C) + (sign * on * cop * P + solar) / C)
        temps[k + 1] = temp
    p = states @ P
    q = states @ (P * tan_phi)
    traj = Trajectory.from_power(p, period_s=dt_s, reactive_kvar=q, start=start)
    return EnsembleRun(traj, temps, states, {"R": R, "C": C, "P": P})


def _parse_time(text, lineno):
    s = text.strip()
    try:
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        t = dt.datetime.fromisoformat(s)
    except ValueError:
        raise ValueError(f"line {lineno}: bad timestamp {text!r}") from None
    if t.tzinfo is not None:
        t = t.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return np.datetime64(t, "s")


def load_trajectory(path, format: str = "csv") -> Trajectory:
    """Parse ``timestamp,active_kw[,reactive_kvar]`` CSV with ISO-8601 timestamps.

    The sampling period is the smallest interval. Intervals that are whole
    multiples of it are recorded as gaps; any other interval is an error.
    """
    if format != "csv":
        raise ValueError(f"unsupported trajectory format {format!r}")
    ts, p, q, lines = [], [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("line 1: empty file")
        header = [h.strip() for h in header]
        if header[:2] != ["timestamp", "active_kw"] or header[2:] not in ([], ["reactive_kvar"]):
            raise ValueError("line 1: header must be timestamp,active_kw[,reactive_kvar]")
        has_q = len(header) == 3
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            ts.append(_parse_time(row[0], lineno))
            lines.append(lineno)
            try:
                p.append(float(row[1]))
                if has_q:
                    q.append(float(row[2]))
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric power value") from None
            if not math.isfinite(p[-1]) or (has_q and not math.isfinite(q[-1])):
                raise ValueError(f"line {lineno}: non-finite power value")
    if not ts:
        raise ValueError("file has no samples")
    ts = np.array(ts, dtype="datetime64[s]")
    steps = np.diff(ts).astype(np.int64)
    if np.any(steps <= 0):
        bad = lines[int(np.flatnonzero(steps <= 0)[0]) + 1]
        raise ValueError(f"line {bad}: timestamps must be strictly increasing")
    period = int(steps.min()) if len(steps) else 3600
    if np.any(steps % period):
        bad = lines[int(np.flatnonzero(steps % period)[0]) + 1]
        raise ValueError(f"line {bad}: non-uniform sampling (period {period} s)")
    gaps = tuple(int(i) + 1 for i in np.flatnonzero(steps > period))
    return Trajectory(ts, np.array(p), np.array(q) if has_q else None, float(period), gaps)


def write_trajectory(traj: Trajectory, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        has_q = traj.reactive_kvar is not None
        w.writerow(["timestamp", "active_kw"] + (["reactive_kvar"] if has_q else []))
        for i, t in enumerate(traj.timestamps):
            row = [str(t.astype("datetime64[s]")), repr(float(traj.active_kw[i]))]
            if has_q:
                row.append(repr(float(traj.reactive_kvar[i])))
            w.writerow(row)
