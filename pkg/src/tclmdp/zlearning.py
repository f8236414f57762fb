"""Model-free estimation of the desirability from passive transitions (Z-learning).

Each observed move ``beta -> alpha`` between times ``t`` and ``t + 1`` updates

    z_t[beta] <- (1 - eta) z_t[beta] + eta * exp(U_t[beta] / gamma) * z_{t+1}[alpha]

with ``z_{T+1} = 1``. Step sizes decay per ``(t, beta)`` entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .lsmdp import Desirability, UtilitySchedule, policy_from_desirability
from .markov import check_stochastic, transitions_from_counts
from .uncertainty import AmbiguitySet, robust_policy


class TransitionSample(NamedTuple):
    t: int
    beta: int
    alpha: int
    weight: float = 1.0


@dataclass(frozen=True)
class LearningSchedule:
    """Step-size rule ``eta_k = c / (c + k)`` where ``k`` counts earlier visits of the entry.

    The first visit therefore uses ``eta = 1`` and replaces the initial guess.
    ``rule`` overrides the default with any callable of ``k``.
    """

    c: float = 2.0
    max_samples: int | None = None
    tol: float = 0.0
    rule: Callable[[int], float] | None = None

    def __post_init__(self):
        if self.rule is None and not self.c > 0:
            raise ValueError("c must be positive")

    def eta(self, k):
        if self.rule is not None:
            return self.rule(k)
        return self.c / (self.c + k)


class ZLearner:
    """Single-writer Z-learning state; ``snapshot`` returns an immutable copy."""

    def __init__(self, sched: UtilitySchedule, lsched: LearningSchedule | None = None):
        self.sched = sched
        self.lsched = lsched or LearningSchedule()
        T, n = sched.horizon, sched.n
        self.T, self.n = T, n
        # row t holds z_t; row T + 1 is the fixed terminal value 1
        self.z = np.ones((T + 2, n))
        self.visits = np.zeros((T + 1, n), dtype=int)
        reward = np.vstack([np.zeros((1, n)), sched.U]) / sched.gamma
        self.gain = np.exp(reward)
        self.rejected = 0
        self.updates = 0
        self.last_change = 0.0

    def update(self, sample):
        t, beta, alpha = int(sample[0]), int(sample[1]), int(sample[2])
        w = sample[3] if len(sample) > 3 else 1.0
        if not (0 <= t <= self.T and 0 <= beta < self.n and 0 <= alpha < self.n):
            self.rejected += 1
            return False
        k = self.visits[t, beta]
        eta = self.lsched.eta(k)
        old = self.z[t, beta]
        new = (1.0 - eta) * old + eta * self.gain[t, beta] * w * self.z[t + 1, alpha]
        self.z[t, beta] = new
        self.visits[t, beta] = k + 1
        self.updates += 1
        self.last_change = abs(new - old)
        return True

    def snapshot(self) -> Desirability:
        return Desirability(np.log(self.z[: self.T + 1].copy()), self.sched.gamma)


@dataclass
class ZLearningResult:
    desirability: Desirability
    policy: object
    default_matrix: np.ndarray
    visits: np.ndarray
    rejected: int
    n_updates: int
    curve: list = field(default_factory=list)


def max_relative_error(z_hat, z_ref):
    z_hat, z_ref = np.asarray(z_hat), np.asarray(z_ref)
    return float(np.max(np.abs(z_hat - z_ref) / np.abs(z_ref)))


def z_learn(samples: Iterable, sched: UtilitySchedule, lsched: LearningSchedule | None = None,
            Pbar=None, z_ref=None, record_every=0, order: str = "stream") -> ZLearningResult:
    """Run Z-learning over a sample stream.

    ``order="backward"`` buffers the stream and replays it sorted by time,
    latest first (stable within a time). Each ``z_t`` then learns against an
    already settled ``z_{t+1}``; with ``c = 1`` every entry becomes the plain
    sample mean of its targets, the lowest-variance use of a fixed batch.

    The induced policy uses ``Pbar`` when given, otherwise the empirical
    default matrix counted from the same samples. ``z_ref`` (shape ``(T+1, n)``)
    enables a learning curve of ``(samples seen, max relative error)`` recorded
    every ``record_every`` samples.
    """
    if order == "backward":
        samples = sorted(samples, key=lambda s: -int(s[0]))
    elif order != "stream":
        raise ValueError("order must be 'stream' or 'backward'")
    learner = ZLearner(sched, lsched)
    n = sched.n
    counts = np.zeros((n, n))
    curve = []
    cap = learner.lsched.max_samples
    seen = 0
    for s in samples:
        if cap is not None and seen >= cap:
            break
        seen += 1
        if learner.update(s):
            counts[int(s[2]), int(s[1])] += 1.0
        if z_ref is not None and record_every and seen % record_every == 0:
            curve.append((seen, max_relative_error(learner.z[: learner.T + 1], z_ref)))
    des = learner.snapshot()
    if Pbar is None:
        default = transitions_from_counts(counts).P
    else:
        default = check_stochastic(Pbar)
    policy = policy_from_desirability(default, des)
    return ZLearningResult(des, policy, default, learner.visits.copy(), learner.rejected,
                           learner.updates, curve)


def passive_samples(Pbar, horizon, n_samples, seed=None, rho0=None, explore=0.0):
    """Transitions observed along episodes of the uncontrolled chain.

    Episodes cover times ``0..horizon + 1`` and start from ``rho0`` (uniform by
    default); each yields ``horizon + 1`` samples. With ``explore > 0`` each move
    is instead drawn from ``(1 - explore) * Pbar + explore * uniform-over-support``
    and carries the importance weight ``Pbar / proposal`` so the update stays
    unbiased.
    """
    Pbar = check_stochastic(Pbar)
    n = Pbar.shape[0]
    rng = np.random.default_rng(seed)
    rho0 = np.full(n, 1.0 / n) if rho0 is None else np.asarray(rho0, dtype=float)
    if explore:
        support = (Pbar > 0).astype(float)
        proposal = (1.0 - explore) * Pbar + explore * support / support.sum(axis=0)
    else:
        proposal = Pbar
    cum = np.cumsum(proposal, axis=0)
    cum[-1] = 1.0
    per_episode = horizon + 1
    n_episodes = -(-n_samples // per_episode)
    state = np.minimum(np.searchsorted(np.cumsum(rho0), rng.random(n_episodes), side="right"), n - 1)
    ts = np.empty((n_episodes, per_episode), dtype=int)
    origin = np.empty_like(ts)
    dest = np.empty_like(ts)
    for t in range(per_episode):
        u = rng.random(n_episodes)
        nxt = (u[:, None] > cum[:, state].T).sum(axis=1)
        nxt = np.minimum(nxt, n - 1)
        ts[:, t] = t
        origin[:, t] = state
        dest[:, t] = nxt
        state = nxt
    ts, origin, dest = ts.ravel()[:n_samples], origin.ravel()[:n_samples], dest.ravel()[:n_samples]
    if explore:
        weights = (Pbar[dest, origin] / proposal[dest, origin]).tolist()
    else:
        weights = [1.0] * len(ts)
    return [TransitionSample(t, b, a, w) for t, b, a, w in
            zip(ts.tolist(), origin.tolist(), dest.tolist(), weights)]


def robustify_learned(z_hat: Desirability, amb: AmbiguitySet):
    """Robust policy built from a learned desirability."""
    return robust_policy(amb, z_hat)


def empirical_default(samples, n):
    states_b = np.array([s[1] for s in samples], dtype=int)
    states_a = np.array([s[2] for s in samples], dtype=int)
    C = np.zeros((n, n))
    np.add.at(C, (states_a, states_b), 1.0)
    return transitions_from_counts(C)

