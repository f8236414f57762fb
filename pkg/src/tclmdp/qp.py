"""Small dense convex quadratic programs.

    minimize    0.5 x^T H x + g^T x
    subject to  A_eq x = b_eq,  A_in x <= b_in

Equalities are eliminated through a null-space basis. The reduced strictly
convex problem is warm-started from its least-distance form (solved by
non-negative least squares) and finished with a primal active-set method, so
the returned point satisfies the KKT conditions to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, null_space, solve_triangular
from scipy.optimize import linprog


class QPInfeasible(ValueError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    active: np.ndarray


def kkt_residual(H, g, x, A_eq, b_eq, y_eq, A_in, b_in, y_in):
    stat = H @ x + g + A_eq.T @ y_eq + A_in.T @ y_in
    parts = [np.abs(stat).max(initial=0.0)]
    if len(b_eq):
        parts.append(np.abs(A_eq @ x - b_eq).max())
    if len(b_in):
        slack = A_in @ x - b_in
        parts.append(max(slack.max(), 0.0))
        parts.append(max((-y_in).max(), 0.0))
        parts.append(np.abs(y_in * slack).max())
    return float(max(parts))


def nnls(E, f, maxiter=None):
    """Lawson-Hanson non-negative least squares ``min ||E u - f||, u >= 0``."""
    m, n = E.shape
    maxiter = maxiter or 3 * n + 50
    tol = 10 * np.finfo(float).eps * np.abs(E).sum(axis=0).max(initial=1.0) * max(m, n)
    passive = np.zeros(n, dtype=bool)
    u = np.zeros(n)
    w = E.T @ (f - E @ u)
    for _ in range(maxiter):
        if passive.all() or w[~passive].max(initial=-np.inf) <= tol:
            break
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(E[:, passive], f, rcond=None)[0]
            if np.all(z[passive] > tol):
                u = z
                break
            neg = passive & (z <= tol)
            alpha = np.min(u[neg] / (u[neg] - z[neg]))
            u = u + alpha * (z - u)
            passive &= u > tol
            u[~passive] = 0.0
        w = E.T @ (f - E @ u)
    return u


def _ldp_start(L, g, A, b):
    """Optimum of the inequality QP via its least-distance reformulation.

    With ``H = L L^T`` and ``w = L^T x + L^{-1} g`` the problem becomes
    ``min ||w||`` s.t. ``G w >= h``, which NNLS solves exactly.
    """
    n = len(g)
    Linv_g = solve_triangular(L, g, lower=True)
    x_unc = -solve_triangular(L.T, Linv_g, lower=False)
    if len(b) == 0 or np.all(A @ x_unc <= b):
        return x_unc
    # G = -A L^{-T},  h = -b - A H^{-1} g
    G = -solve_triangular(L, A.T, lower=True).T
    h = -b + A @ x_unc
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    u = nnls(E, f)
    r = E @ u - f
    if np.linalg.norm(r) < 1e-12 or abs(r[-1]) < 1e-14:
        raise QPInfeasible("constraints are infeasible")
    w = -r[:n] / r[-1]
    return solve_triangular(L.T, w - Linv_g, lower=False)


def _phase_one(A, b):
    """Some feasible point of ``A x <= b`` (HiGHS), or ``QPInfeasible``."""
    res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b, bounds=(None, None), method="highs")
    if res.status == 2:
        raise QPInfeasible("constraints are infeasible")
    if res.status != 0:
        raise RuntimeError(f"phase-one LP failed: {res.message}")
    return res.x


def _violation(A, b, x):
    return float(np.max(A @ x - b, initial=0.0) / max(1.0, np.abs(b).max(initial=0.0)))


def _active_set(H, g, A, b, x, tol=1e-10, maxiter=500):
    """Primal active-set iterations from a (nearly) feasible point."""
    m, n = A.shape
    scale = np.maximum(1.0, np.abs(b))
    gscale = max(1.0, np.abs(g).max(initial=0.0))
    W = [i for i in range(m) if A[i] @ x - b[i] >= -tol * scale[i]]
    y = np.zeros(m)
    stationary = False
    for it in range(1, maxiter + 1):
        Aw = A[W]
        k = len(W)
        if not stationary:
            K = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
            rhs = np.concatenate([-(H @ x + g), np.zeros(k)])
            p = np.linalg.lstsq(K, rhs, rcond=None)[0][:n]
            stationary = np.abs(p).max(initial=0.0) <= 1e-13 * max(1.0, np.abs(x).max(initial=0.0))
        if stationary:
            # minimiser on the working set: snap to it and check multiplier signs
            stationary = False
            if not k:
                return x, y, it
            x = _project(H, g, Aw, b[W], x)
            yw = _multipliers(H, g, Aw, x)
            if np.all(yw >= -tol * gscale):
                y = np.zeros(m)
                y[W] = np.maximum(yw, 0.0)
                return x, y, it
            W.pop(int(np.argmin(yw)))
            continue
        Ap = A @ p
        slack = b - A @ x
        alpha, block = 1.0, None
        for i in range(m):
            if i not in W and Ap[i] > 1e-15 and slack[i] / Ap[i] < alpha:
                alpha, block = max(slack[i] / Ap[i], 0.0), i
        x = x + alpha * p
        if block is not None:
            W.append(block)
        else:
            stationary = True
    raise RuntimeError("active-set iterations did not terminate")


def _project(H, g, Aw, bw, x):
    """Exact minimiser on the face ``Aw x = bw``."""
    n = len(x)
    k = len(bw)
    K = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
    rhs = np.concatenate([-g, bw])
    return np.linalg.lstsq(K, rhs, rcond=None)[0][:n]


def _multipliers(H, g, Aw, x):
    return np.linalg.lstsq(Aw.T, -(H @ x + g), rcond=None)[0]


def solve_qp(H, g, A_eq=None, b_eq=None, A_in=None, b_in=None) -> QPResult:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.asarray(g, dtype=float)
    n = len(g)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_in = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, dtype=float))
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float)
    H = 0.5 * (H + H.T)
    # unit-norm inequality rows keep the active-set tolerances scale free
    row_norm = np.linalg.norm(A_in, axis=1) if len(b_in) else np.zeros(0)
    if np.any(row_norm == 0):
        if np.any(b_in[row_norm == 0] < 0):
            raise QPInfeasible("constraints are infeasible")
    row_norm = np.where(row_norm > 0, row_norm, 1.0)
    A_in_s, b_in_s = A_in / row_norm[:, None], b_in / row_norm

    if len(b_eq):
        x0 = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0]
        if np.abs(A_eq @ x0 - b_eq).max() > 1e-9 * max(1.0, np.abs(b_eq).max()):
            raise QPInfeasible("equality constraints are inconsistent")
        Z = null_space(A_eq)
    else:
        x0 = np.zeros(n)
        Z = np.eye(n)

    if Z.shape[1] == 0:
        x = x0
        if len(b_in) and np.any(A_in_s @ x - b_in_s > 1e-9 * np.maximum(1.0, np.abs(b_in_s))):
            raise QPInfeasible("constraints are infeasible")
        y_in = np.zeros(len(b_in))
        iters = 0
    else:
        Hr = Z.T @ H @ Z
        gr = Z.T @ (H @ x0 + g)
        Ar = A_in_s @ Z
        br = b_in_s - A_in_s @ x0
        try:
            L = cho_factor(Hr, lower=True)[0]
            L = np.tril(L)
        except np.linalg.LinAlgError as exc:
            raise ValueError("QP is not strictly convex on the feasible subspace") from exc
        try:
            w = _ldp_start(L, gr, Ar, br)
        except QPInfeasible:
            w = None
        if len(br) and (w is None or _violation(Ar, br, w) > 1e-10):
            # the least-distance start loses accuracy when the unconstrained
            # minimiser lies far outside; restart from a certified feasible point
            w = _phase_one(Ar, br)
        if len(br):
            w, y_in, iters = _active_set(Hr, gr, Ar, br, w)
        else:
            y_in, iters = np.zeros(0), 0
        x = x0 + Z @ w
    y_in = y_in / row_norm
    # equality multipliers from full stationarity
    resid = -(H @ x + g + A_in.T @ y_in)
    y_eq = np.linalg.lstsq(A_eq.T, resid, rcond=None)[0] if len(b_eq) else np.zeros(0)
    obj = float(0.5 * x @ H @ x + g @ x)
    kkt = kkt_residual(H, g, x, A_eq, b_eq, y_eq, A_in, b_in, y_in)
    active = np.flatnonzero(y_in > 0) if len(b_in) else np.zeros(0, dtype=int)
    return QPResult(x, y_eq, y_in, obj, kkt, iters, active)
