"""Write a synthetic hourly building load with one curtailment event.

Produces ``configs/data/dr_building.csv`` (six weeks of hourly kW) and
``configs/data/dr_events.json``. Weekdays follow an office-hours profile with
a per-day level; weekends run at a fraction of it. On the event day the load
drops by the delivered curtailment during the event window.
"""

import argparse
import datetime as dt
import json
from pathlib import Path

import numpy as np

from tclmdp.markov import Trajectory
from tclmdp.synth import write_trajectory


def build(seed=0, days=42, event=dt.date(2016, 11, 28), curtail_kw=40.0, hours=(13, 17)):
    rng = np.random.default_rng(seed)
    start = event - dt.timedelta(days=days - 1)
    hod = np.arange(24)
    shape = 150.0 + 150.0 * np.exp(-0.5 * ((hod - 14.0) / 3.5) ** 2)
    kw = []
    for i in range(days):
        d = start + dt.timedelta(days=i)
        level = rng.uniform(0.9, 1.1) * (0.4 if d.weekday() >= 5 else 1.0)
        day = shape * level + rng.normal(0.0, 3.0, 24)
        if d == event:
            day[hours[0]:hours[1]] -= curtail_kw
        kw.append(day)
    t0 = np.datetime64(start.isoformat() + "T00:00:00", "s")
    traj = Trajectory.from_power(np.concatenate(kw), period_s=3600.0, start=t0)
    ev = {"date": event.isoformat(), "start_hour": hours[0], "end_hour": hours[1], "enrolled_kw": 50.0}
    return traj, [ev]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="configs/data")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj, events = build(args.seed)
    write_trajectory(traj, out / "dr_building.csv")
    (out / "dr_events.json").write_text(json.dumps(events, indent=2) + "\n")
    print(f"wrote {len(traj)} samples and {len(events)} event(s) to {out}")


if __name__ == "__main__":
    main()
