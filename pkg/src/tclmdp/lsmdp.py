"""Linearly-solvable MDP for ensemble dispatch.

The aggregator picks controlled transition matrices ``P_t`` minimising the
expected negative utility plus ``gamma`` times the KL divergence from the
default matrix ``Pbar``. The optimum is available in closed form through the
desirability ``z = exp(-phi / gamma)``, computed here in log space.

Indexing used throughout:

* ``U[k]`` is the reward for occupying a state at time ``k + 1`` (``k = 0..T-1``),
  so the schedule has ``T`` rows; the initial state carries no reward.
* ``log_z[t]`` is the log-desirability of a state at time ``t`` (``t = 0..T``).
* ``P_t`` (``t = 0..T-1``) moves ``rho_t`` to ``rho_{t+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .markov import COLUMN_TOL, StateSpace, check_stochastic, normalize_columns


@dataclass(frozen=True)
class UtilitySchedule:
    """Per-state rewards over the horizon (higher is better) and the KL weight."""

    U: np.ndarray
    gamma: float

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if not np.all(np.isfinite(U)):
            raise ValueError("utilities must be finite")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "U", U)

    @property
    def horizon(self):
        return self.U.shape[0]

    @property
    def n(self):
        return self.U.shape[1]

    def shifted(self, dU):
        return UtilitySchedule(self.U + dU, self.gamma)


@dataclass(frozen=True)
class Desirability:
    log_z: np.ndarray
    gamma: float

    @property
    def z(self):
        return np.exp(self.log_z)

    @property
    def phi(self):
        return -self.gamma * self.log_z

    @property
    def horizon(self):
        return self.log_z.shape[0] - 1

    @classmethod
    def from_z(cls, z, gamma):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise ValueError("desirability must be strictly positive")
        return cls(np.log(z), gamma)


@dataclass(frozen=True)
class Policy:
    """Controlled transition matrices, one per decision step, shape ``(T, n, n)``."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 3:
            raise ValueError("policy must be a (T, n, n) stack")
        check_stochastic(P, COLUMN_TOL)
        object.__setattr__(self, "P", P)

    @property
    def horizon(self):
        return self.P.shape[0]

    @property
    def n(self):
        return self.P.shape[1]

    def __getitem__(self, t):
        return self.P[t]


@dataclass(frozen=True)
class EnsembleDistribution:
    """State probabilities ``rho[t]`` for ``t = 0..T``."""

    rho: np.ndarray

    @property
    def horizon(self):
        return self.rho.shape[0] - 1

    @property
    def rho0(self):
        return self.rho[0]


def as_stack(M, T):
    """Broadcast a single matrix (or validate a stack) to shape ``(T, n, n)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        return np.broadcast_to(M, (T,) + M.shape)
    if M.ndim == 3 and M.shape[0] == T:
        return M
    raise ValueError(f"expected an (n, n) matrix or a ({T}, n, n) stack, got shape {M.shape}")


def _log(W):
    with np.errstate(divide="ignore"):
        return np.log(W)


def backward(kernel, sched: UtilitySchedule, log_kernel=False):
    """Backward desirability recursion with a generic nonnegative kernel.

    ``log z_t[b] = U_t[b] / gamma + logsumexp_a(log W_t[a, b] + log z_{t+1}[a])``
    for ``t < T`` and ``log z_T = U_T / gamma`` (nothing happens after the
    horizon). Returns ``(Desirability, Policy)`` where the policy at step ``t``
    is ``W_t[a, b] z_{t+1}[a]`` normalised over ``a``. With ``log_kernel`` the
    kernel is given as ``log W`` (``-inf`` marks zero entries).
    """
    T, n = sched.horizon, sched.n
    W = as_stack(kernel, T)
    if W.shape[1:] != (n, n):
        raise ValueError("kernel and utility schedule disagree on the state count")
    logW = W if log_kernel else _log(W)
    g = sched.gamma
    reward = np.vstack([np.zeros((1, n)), sched.U]) / g  # reward[t] = U_t / gamma
    log_z = np.empty((T + 1, n))
    log_z[T] = reward[T]
    P = np.empty((T, n, n))
    for t in range(T - 1, -1, -1):
        scores = logW[t] + log_z[t + 1][:, None]
        col = logsumexp(scores, axis=0)
        if not np.all(np.isfinite(col)):
            raise ArithmeticError("unreachable desirability: a column has no support")
        log_z[t] = reward[t] + col
        P[t] = normalize_columns(np.exp(scores - col[None, :]))
    return Desirability(log_z, g), Policy(P)


def solve_backward(Pbar, sched: UtilitySchedule):
    """Optimal standard policy and desirability for default matrix ``Pbar``."""
    Pbar = check_stochastic(Pbar)
    return backward(Pbar, sched)


def policy_from_desirability(kernel, des: Desirability, log_kernel=False):
    """Closed-form policy ``W[a, b] z_{t+1}[a] / sum_a(...)`` for a given desirability."""
    T = des.horizon
    W = as_stack(kernel, T)
    logW = W if log_kernel else _log(W)
    P = np.empty(W.shape)
    for t in range(T):
        scores = logW[t] + des.log_z[t + 1][:, None]
        col = logsumexp(scores, axis=0)
        if not np.all(np.isfinite(col)):
            raise ArithmeticError("unreachable desirability: a column has no support")
        P[t] = normalize_columns(np.exp(scores - col[None, :]))
    return Policy(P)


def bellman_residual(Pbar, sched: UtilitySchedule, des: Desirability):
    """Relative residual of ``z_t = exp(U_t / gamma) * Pbar_t^T z_{t+1}`` at every (t, state).

    Evaluated as ``|exp(lhs - rhs) - 1|`` in log space so long horizons do not overflow.
    """
    T, n = sched.horizon, sched.n
    W = as_stack(Pbar, T)
    reward = np.vstack([np.zeros((1, n)), sched.U]) / sched.gamma
    log_next = np.vstack([des.log_z[1:], np.zeros((1, n))])
    W_ext = np.concatenate([W, W[-1:]], axis=0)
    rhs = reward + logsumexp(_log(W_ext) + log_next[:, :, None], axis=1)
    return np.abs(np.expm1(des.log_z - rhs))


def propagate(rho0, policy: Policy) -> EnsembleDistribution:
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (policy.n,) or np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > 1e-12:
        raise ValueError("rho0 must be a probability vector over the policy states")
    rho = np.empty((policy.horizon + 1, policy.n))
    rho[0] = rho0
    for t in range(policy.horizon):
        rho[t + 1] = policy.P[t] @ rho[t]
    return EnsembleDistribution(rho)


def expected_power(dist: EnsembleDistribution, ss: StateSpace):
    """Expected active and reactive power of the ensemble at every time slice."""
    if dist.rho.shape[1] != ss.n:
        raise ValueError("distribution and state space sizes differ")
    p = dist.rho @ ss.p
    q = dist.rho @ ss.q
    # guard against rounding pushing the mean outside the convex hull
    return np.clip(p, ss.p.min(), ss.p.max()), np.clip(q, ss.q.min(), ss.q.max())


def kl_terms(P, Pbar):
    """Elementwise ``P log(P / Pbar)`` with ``0 log 0 = 0``; raises on support violations."""
    P = np.asarray(P, dtype=float)
    Pbar = np.broadcast_to(np.asarray(Pbar, dtype=float), P.shape)
    if np.any((P > 0) & (Pbar <= 0)):
        raise ValueError("infinite divergence: policy has support outside the default matrix")
    out = np.zeros_like(P)
    m = P > 0
    out[m] = P[m] * np.log(P[m] / Pbar[m])
    return out


def objective_value(policy: Policy, dist: EnsembleDistribution, Pbar, sched: UtilitySchedule):
    """Expected negative utility plus the weighted KL control cost over the horizon."""
    T = policy.horizon
    Pb = as_stack(Pbar, T)
    total = 0.0
    for t in range(T):
        P = policy.P[t]
        step = -sched.U[t][:, None] * P + sched.gamma * kl_terms(P, Pb[t])
        total += float(step.sum(axis=0) @ dist.rho[t])
    return total


def optimal_value(des: Desirability, rho0):
    """Closed-form optimum ``-gamma * sum_b rho0[b] log z_0[b]`` of the standard problem."""
    return float(-des.gamma * np.asarray(rho0) @ des.log_z[0])


def kl_divergence(P, Pbar, weights=None):
    """Column KL divergences of ``P`` from ``Pbar``, optionally weighted and summed."""
    cols = kl_terms(P, Pbar).sum(axis=-2)
    if weights is None:
        return cols
    return float(np.sum(cols * weights))
