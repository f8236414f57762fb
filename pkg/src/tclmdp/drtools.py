"""Demand-response accounting: customer baseline, error metrics, price response.

Baseline rule: among weekdays before the event, drop the day before the
event, holidays, earlier event days and low-usage days; take the last 10
remaining days, keep the 5 with the highest usage over the event window and
average each hour across them.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .markov import Trajectory


@dataclass(frozen=True)
class DrEvent:
    date: dt.date
    start_hour: int
    end_hour: int
    enrolled_kw: float

    def __post_init__(self):
        d = self.date
        if isinstance(d, str):
            d = dt.date.fromisoformat(d)
        elif isinstance(d, np.datetime64):
            d = d.astype("datetime64[D]").item()
        object.__setattr__(self, "date", d)
        if not 0 <= self.start_hour < self.end_hour <= 24:
            raise ValueError("event hours must satisfy 0 <= start < end <= 24")
        if self.enrolled_kw < 0:
            raise ValueError("enrolled curtailment must be nonnegative")

    @property
    def hours(self):
        return np.arange(self.start_hour, self.end_hour)

    def to_dict(self):
        return {"date": self.date.isoformat(), "start_hour": self.start_hour,
                "end_hour": self.end_hour, "enrolled_kw": self.enrolled_kw}


def load_events(path):
    """Events from a JSON list of ``{date, start_hour, end_hour, enrolled_kw}`` objects."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["events"]
    return [DrEvent(d["date"], int(d["start_hour"]), int(d["end_hour"]), float(d["enrolled_kw"]))
            for d in data]


def daily_profiles(traj: Trajectory):
    """Hourly mean power per calendar day.

    Returns ``(days, profiles)`` with ``profiles[i, h]`` the mean kW over hour
    ``h`` of ``days[i]``; hours without samples are NaN.
    """
    hours = traj.timestamps.astype("datetime64[h]")
    day = hours.astype("datetime64[D]")
    days, day_idx = np.unique(day, return_inverse=True)
    hod = (hours - day.astype("datetime64[h]")).astype(int)
    total = np.zeros((len(days), 24))
    count = np.zeros((len(days), 24))
    np.add.at(total, (day_idx, hod), traj.active_kw)
    np.add.at(count, (day_idx, hod), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prof = total / count
    return [d.item() for d in days], prof


@dataclass(frozen=True)
class BaselineRule:
    window: int = 10
    top: int = 5
    low_fraction: float = 0.25
    low_window: int = 30
    rank_by: str = "event"  # "event" window mean or "daily" total
    holidays: tuple = ()
    event_days: tuple = ()

    def __post_init__(self):
        if self.rank_by not in ("event", "daily"):
            raise ValueError("rank_by must be 'event' or 'daily'")
        if not 0 < self.top <= self.window:
            raise ValueError("need 0 < top <= window")


@dataclass
class Baseline:
    hourly_kw: np.ndarray
    days: list
    exclusions: dict = field(default_factory=dict)

    def event_kw(self, event: DrEvent):
        return self.hourly_kw[event.hours]


def baseline(traj: Trajectory, event: DrEvent, rule: BaselineRule | None = None) -> Baseline:
    """Per-hour baseline for the event day under ``rule``."""
    rule = rule or BaselineRule()
    days, prof = daily_profiles(traj)
    holidays = {dt.date.fromisoformat(h) if isinstance(h, str) else h for h in rule.holidays}
    events = {dt.date.fromisoformat(h) if isinstance(h, str) else h for h in rule.event_days}
    day_before = event.date - dt.timedelta(days=1)
    counts = {"weekend": 0, "day_before": 0, "holiday": 0, "event_day": 0, "incomplete": 0, "low_usage": 0}
    candidates = []
    for i in range(len(days) - 1, -1, -1):
        d = days[i]
        if d >= event.date:
            continue
        if d.weekday() >= 5:
            counts["weekend"] += 1
        elif d == day_before:
            counts["day_before"] += 1
        elif d in holidays:
            counts["holiday"] += 1
        elif d in events:
            counts["event_day"] += 1
        elif np.isnan(prof[i]).any():
            counts["incomplete"] += 1
        else:
            candidates.append(i)
    # low usage: daily mean below a fraction of the mean over the trailing candidate days
    recent = candidates[: rule.low_window]
    level = float(np.mean(prof[recent])) if recent else 0.0
    eligible = []
    for i in candidates:
        if prof[i].mean() < rule.low_fraction * level:
            counts["low_usage"] += 1
        else:
            eligible.append(i)
        if len(eligible) == rule.window:
            break
    if len(eligible) < rule.window:
        detail = ", ".join(f"{k}={v}" for k, v in counts.items())
        raise ValueError(f"only {len(eligible)} eligible weekdays before {event.date} "
                         f"(need {rule.window}); excluded: {detail}")
    if rule.rank_by == "event":
        score = prof[eligible][:, event.hours].mean(axis=1)
    else:
        score = prof[eligible].sum(axis=1)
    # ties broken toward the more recent day; eligible is newest first
    order = sorted(range(len(eligible)), key=lambda k: (-score[k], k))
    chosen = sorted(eligible[k] for k in order[: rule.top])
    return Baseline(prof[chosen].mean(axis=0), [days[i] for i in chosen], counts)


@dataclass
class ErrorMetrics:
    hours: np.ndarray
    baseline_kw: np.ndarray
    realtime_kw: np.ndarray
    baseline_error_pct: np.ndarray
    delivered_kw: np.ndarray
    curtailment_error_pct: np.ndarray
    in_event: np.ndarray
    flagged: np.ndarray
    mean_baseline_error_pct: float
    curtailment_error_total_pct: float


def error_metrics(base, realtime, event: DrEvent) -> ErrorMetrics:
    """Baseline error ``(b - r) / r`` per hour and curtailment error ``(delivered - enrolled) / enrolled``.

    ``base`` is a ``Baseline`` or 24 hourly values; ``realtime`` is a
    ``Trajectory`` covering the event day or 24 hourly values. Hours with a zero
    denominator are flagged and left out of the aggregates. The baseline error
    aggregate uses hours outside the event.
    """
    b = np.asarray(base.hourly_kw if isinstance(base, Baseline) else base, dtype=float)
    if isinstance(realtime, Trajectory):
        days, prof = daily_profiles(realtime)
        if event.date not in days:
            raise ValueError("realtime data does not cover the event day")
        r = prof[days.index(event.date)]
    else:
        r = np.asarray(realtime, dtype=float)
    if b.shape != (24,) or r.shape != (24,):
        raise ValueError("baseline and realtime must both give 24 hourly values")
    hours = np.arange(24)
    in_event = (hours >= event.start_hour) & (hours < event.end_hour)
    flagged = ~np.isfinite(r) | (r == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        berr = np.where(flagged, np.nan, (b - r) / r * 100.0)
    delivered = np.where(in_event, b - r, np.nan)
    if event.enrolled_kw > 0:
        cerr = np.where(in_event, (delivered - event.enrolled_kw) / event.enrolled_kw * 100.0, np.nan)
        valid = in_event & np.isfinite(delivered)
        total = float((np.mean(delivered[valid]) - event.enrolled_kw) / event.enrolled_kw * 100.0) \
            if valid.any() else float("nan")
    else:
        flagged = flagged | in_event
        cerr = np.full(24, np.nan)
        total = float("nan")
    out = ~in_event & ~flagged
    mean_b = float(np.mean(berr[out])) if out.any() else float("nan")
    return ErrorMetrics(hours, b, r, berr, delivered, cerr, in_event, flagged, mean_b, total)


METRIC_FIELDS = ("building", "event_date", "hour", "in_event", "baseline_kw", "realtime_kw",
                 "baseline_error_pct", "delivered_kw", "curtailment_error_pct", "flagged")


def write_metrics(rows, path):
    """``rows``: iterable of ``(building, event, ErrorMetrics)``."""
    def fmt(v):
        return "" if not np.isfinite(v) else repr(float(v))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for building, event, m in rows:
            for h in m.hours:
                w.writerow([building, event.date.isoformat(), int(h), int(m.in_event[h]),
                            fmt(m.baseline_kw[h]), fmt(m.realtime_kw[h]), fmt(m.baseline_error_pct[h]),
                            fmt(m.delivered_kw[h]), fmt(m.curtailment_error_pct[h]), int(m.flagged[h])])


@dataclass(frozen=True)
class PriceResponseModel:
    """Linear response ``x_i = beta1_i * price + beta0_i`` per participant."""

    beta1: np.ndarray
    beta0: np.ndarray
    se1: np.ndarray
    se0: np.ndarray
    residual_norm: np.ndarray
    n_samples: int

    def predict(self, price):
        return self.beta1 * price + self.beta0


def fit_price_response(prices, responses) -> PriceResponseModel:
    """Least-squares fit per participant; ``responses`` has shape ``(N,)`` or ``(N, k)``."""
    lam = np.asarray(prices, dtype=float)
    X = np.asarray(responses, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if lam.ndim != 1 or X.shape[0] != len(lam):
        raise ValueError("need one response row per price")
    if len(np.unique(lam)) < 2:
        raise ValueError("price never varied")
    N = len(lam)
    D = np.column_stack([lam, np.ones(N)])
    coef, *_ = np.linalg.lstsq(D, X, rcond=None)
    resid = X - D @ coef
    rss = np.sum(resid ** 2, axis=0)
    cov = np.linalg.inv(D.T @ D)
    s2 = rss / (N - 2) if N > 2 else np.full(X.shape[1], np.nan)
    se = np.sqrt(np.outer(np.diag(cov), s2))
    return PriceResponseModel(coef[0], coef[1], se[0], se[1], np.sqrt(rss), N)


@dataclass
class PriceProposal:
    price: float
    expected_kw: float
    shortfall_kw: float
    explored: bool


def propose_price(model: PriceResponseModel, target_kw: float, eps: float = 0.0,
                  cap: float = 1000.0, rng=None) -> PriceProposal:
    """Smallest price in ``[0, cap]`` whose predicted total response meets the target.

    With probability ``eps`` the price is scaled by a uniform factor in
    ``[0.8, 1.2]`` (then clipped to ``[0, cap]``) to keep exploring.
    """
    if not 0 <= eps <= 1:
        raise ValueError("exploration probability must lie in [0, 1]")
    b1, b0 = float(np.sum(model.beta1)), float(np.sum(model.beta0))
    if b0 >= target_kw:
        price = 0.0
    elif b1 > 0:
        price = min((target_kw - b0) / b1, cap)
    else:
        price = cap
    explored = False
    if eps > 0:
        rng = np.random.default_rng(rng)
        if rng.random() < eps:
            price = float(np.clip(price * rng.uniform(0.8, 1.2), 0.0, cap))
            explored = True
    expected = b1 * price + b0
    shortfall = max(0.0, target_kw - expected)
    if shortfall > 1e-9 and not explored:
        warnings.warn(f"target {target_kw} kW unreachable at the price cap; shortfall {shortfall:.3g} kW")
    return PriceProposal(price, expected, shortfall, explored)
