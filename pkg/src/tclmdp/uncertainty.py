"""Stochastic and robust policies under uncertain default transition probabilities.

Both variants reuse the standard backward recursion with an attenuated kernel:

* stochastic: ``Pbar * exp(-sigma2 / (2 Pbar**2))``
* robust:     ``G_low * exp(-zeta_high / (2 G_low**2))``

Entries whose base probability is zero carry zero mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stats
from .lsmdp import Desirability, Policy, UtilitySchedule, backward, policy_from_desirability
from .markov import check_stochastic


def attenuated_log_kernel(base, variance):
    """``log(base) - variance / (2 base**2)``, with ``-inf`` where ``base`` is zero."""
    base = np.asarray(base, dtype=float)
    variance = np.broadcast_to(np.asarray(variance, dtype=float), base.shape)
    logW = np.full(base.shape, -np.inf)
    m = base > 0
    logW[m] = np.log(base[m]) - variance[m] / (2.0 * base[m] ** 2)
    return logW


def attenuated_kernel(base, variance):
    return np.exp(attenuated_log_kernel(base, variance))


@dataclass(frozen=True)
class TransitionUncertainty:
    """Gaussian uncertainty around a known mean matrix.

    ``sigma2`` is a scalar variance applied to every entry, or an array of
    per-entry variances with the shape of ``mean``.
    """

    mean: np.ndarray
    sigma2: float | np.ndarray = 0.0

    def __post_init__(self):
        mean = check_stochastic(self.mean)
        s2 = np.asarray(self.sigma2, dtype=float)
        if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
            raise ValueError("variance must be finite and nonnegative")
        object.__setattr__(self, "mean", mean)

    def log_kernel(self):
        return attenuated_log_kernel(self.mean, self.sigma2)

    def kernel(self):
        return np.exp(self.log_kernel())


@dataclass(frozen=True)
class AmbiguitySet:
    """Confidence bounds on the mean matrix and on the variance."""

    gamma_low: np.ndarray
    gamma_high: np.ndarray
    zeta_low: float
    zeta_high: float
    varsigma: float = 1.0
    xi: float = 1.0
    N: int = 2
    mean: np.ndarray | None = None
    sigma_hat: float | None = None

    def __post_init__(self):
        lo = np.asarray(self.gamma_low, dtype=float)
        hi = np.asarray(self.gamma_high, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("mean bounds must satisfy gamma_low <= gamma_high")
        if self.mean is not None:
            m = np.asarray(self.mean, dtype=float)
            if np.any(lo > m + 1e-15) or np.any(m > hi + 1e-15):
                raise ValueError("mean matrix lies outside its bounds")
        if not 0 <= self.zeta_low <= self.zeta_high:
            raise ValueError("variance bounds must satisfy 0 <= zeta_low <= zeta_high")
        if self.N < 2:
            raise ValueError("insufficient samples")
        object.__setattr__(self, "gamma_low", lo)
        object.__setattr__(self, "gamma_high", hi)

    @classmethod
    def collapsed(cls, mean, sigma2):
        """Degenerate set with the mean and variance known exactly."""
        mean = check_stochastic(mean)
        return cls(mean, mean, float(sigma2), float(sigma2), mean=mean,
                   sigma_hat=math.sqrt(float(sigma2)), N=2)

    def log_kernel(self):
        lo = self.gamma_low
        if self.mean is not None:
            lo = np.where(np.asarray(self.mean) > 0, lo, 0.0)
        logW = attenuated_log_kernel(lo, self.zeta_high)
        if np.any(np.all(np.isneginf(logW), axis=-2)):
            raise ValueError("ambiguity set degenerate: a column has no positive lower bound")
        return logW

    def kernel(self):
        return np.exp(self.log_kernel())

    def to_dict(self):
        return {
            "gamma_low": self.gamma_low.tolist(),
            "gamma_high": self.gamma_high.tolist(),
            "zeta_low": self.zeta_low,
            "zeta_high": self.zeta_high,
            "varsigma": self.varsigma,
            "xi": self.xi,
            "N": self.N,
            "sigma_hat": self.sigma_hat,
        }


def ambiguity_bounds(mean_hat, sigma_hat, N, varsigma, xi, sigma2=None) -> AmbiguitySet:
    """Mean bounds from Student t and variance bounds from chi-square, both with ``N - 1`` dof.

    ``varsigma = 1`` (or ``xi = 1``) collapses the corresponding interval.
    Mean bounds are clipped to ``[0, 1]``. ``sigma2`` overrides ``sigma_hat**2``
    so a known variance enters the variance bounds without rounding.
    """
    if N < 2:
        raise ValueError("insufficient samples")
    if not (0 < varsigma <= 1 and 0 < xi <= 1):
        raise ValueError("confidence parameters must lie in (0, 1]")
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    mean_hat = np.asarray(mean_hat, dtype=float)
    dof = N - 1
    half = half_width(sigma_hat, N, varsigma)
    lo = np.clip(mean_hat - half, 0.0, 1.0)
    hi = np.clip(mean_hat + half, 0.0, 1.0)
    s2 = float(sigma_hat) ** 2 if sigma2 is None else float(sigma2)
    if xi == 1:
        z_lo = z_hi = s2
    else:
        z_lo = dof * s2 / stats.chi2_ppf(1.0 - xi / 2.0, dof)
        z_hi = dof * s2 / stats.chi2_ppf(xi / 2.0, dof)
    return AmbiguitySet(lo, hi, z_lo, z_hi, varsigma, xi, int(N), mean_hat, float(sigma_hat))


def half_width(sigma_hat, N, varsigma):
    """Half-width ``t_{1 - varsigma/2, N-1} * sigma_hat / sqrt(N)`` of the mean interval."""
    t = 0.0 if varsigma == 1 else stats.t_ppf(1.0 - varsigma / 2.0, N - 1)
    return t * float(sigma_hat) / math.sqrt(N)


def uncertainty_from_samples(matrices):
    """Mean matrix, pooled standard deviation and sample count from repeated estimates.

    The standard deviation pools the per-entry sample variances over entries
    with a positive mean.
    """
    M = np.asarray(matrices, dtype=float)
    N = M.shape[0]
    if N < 2:
        raise ValueError("insufficient samples")
    mean = M.mean(axis=0)
    var = M.var(axis=0, ddof=1)
    support = mean > 0
    sigma_hat = float(np.sqrt(var[support].mean())) if np.any(support) else 0.0
    return mean, sigma_hat, N


def stochastic_policy(unc: TransitionUncertainty, z: Desirability) -> Policy:
    return policy_from_desirability(unc.log_kernel(), z, log_kernel=True)


def robust_policy(amb: AmbiguitySet, z: Desirability) -> Policy:
    return policy_from_desirability(amb.log_kernel(), z, log_kernel=True)


def solve_stochastic(unc: TransitionUncertainty, sched: UtilitySchedule):
    """Backward solve with the stochastic kernel in both the policy and the value recursion."""
    return backward(unc.log_kernel(), sched, log_kernel=True)


def solve_robust(amb: AmbiguitySet, sched: UtilitySchedule):
    """Backward solve with the worst-case (upper) variance bound in policy and value recursion."""
    return backward(amb.log_kernel(), sched, log_kernel=True)
