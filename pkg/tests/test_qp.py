import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tclmdp.qp import QPInfeasible, nnls, solve_qp


def rel_kkt(H, g, A_in, b_in, res):
    scale = max(1.0, np.abs(H).max() * np.abs(res.x).max(initial=0.0), np.abs(g).max(initial=0.0),
                np.abs(b_in).max(initial=0.0))
    return res.kkt_residual / scale


def test_unconstrained():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = np.array([1.0, -1.0])
    res = solve_qp(H, g)
    np.testing.assert_allclose(res.x, np.linalg.solve(H, -g))


def test_box_hand_example():
    # min (x-2)^2 + (y+1)^2 on [0,1]^2 -> (1, 0)
    res = solve_qp(2 * np.eye(2), [-4.0, 2.0], A_in=np.vstack([np.eye(2), -np.eye(2)]),
                   b_in=[1.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(res.y_in, [2.0, 0.0, 0.0, 2.0], atol=1e-10)


def test_equality_only():
    res = solve_qp(np.eye(3), np.zeros(3), A_eq=[[1.0, 1.0, 1.0]], b_eq=[3.0])
    np.testing.assert_allclose(res.x, 1.0)
    assert res.y_eq[0] == pytest.approx(-1.0)


def test_infeasible_detected():
    with pytest.raises(QPInfeasible):
        solve_qp(np.eye(1), [0.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
    with pytest.raises(QPInfeasible):
        solve_qp(np.eye(2), [0.0, 0.0], A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[1.0, 2.0])


def test_nnls_matches_scipy():
    from scipy.optimize import nnls as sp_nnls

    rng = np.random.default_rng(0)
    for _ in range(50):
        E = rng.normal(size=(8, 5))
        f = rng.normal(size=8)
        u = nnls(E, f)
        ref, _ = sp_nnls(E, f)
        assert np.all(u >= 0)
        np.testing.assert_allclose(np.linalg.norm(E @ u - f), np.linalg.norm(E @ ref - f), rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10), st.integers(0, 2**31))
def test_kkt_on_random_feasible_problems(n, m, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    g = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = A @ rng.normal(size=n) + rng.random(m)  # feasible by construction
    res = solve_qp(H, g, A_in=A, b_in=b)
    assert rel_kkt(H, g, A, b, res) <= 1e-9


def test_against_conic_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(1)
    for trial in range(1500):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(0, 14))
        me = int(rng.integers(0, n))
        M = rng.normal(size=(n, n))
        H = (M @ M.T + 0.1 * np.eye(n)) * 10 ** rng.uniform(-6, 2)
        g = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.random(m)
        if trial % 3 == 0 and m > 2:
            A[1], b[1] = A[0], b[0]  # duplicated row
        sc = 10 ** rng.uniform(-5, 3, size=m)
        A, b = A * sc[:, None], b * sc
        Ae = rng.normal(size=(me, n))
        be = rng.normal(size=me) * 0.1
        x = cp.Variable(n)
        cons = ([A @ x <= b] if m else []) + ([Ae @ x == be] if me else [])
        prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + g @ x), cons)
        prob.solve(solver="CLARABEL")
        if prob.status == "optimal":
            res = solve_qp(H, g, Ae, be, A, b)
            # the KKT certificate proves optimality; the conic solver must not find a better point
            assert rel_kkt(H, g, A, b, res) <= 1e-9
            assert res.objective <= prob.value + 1e-6 * max(1.0, abs(prob.value))
        elif prob.status == "infeasible":
            with pytest.raises(QPInfeasible):
                solve_qp(H, g, Ae, be, A, b)


def test_badly_scaled_rows_terminate():
    H = 3e-6 * np.eye(2)
    g = np.array([1.0, 1.0])
    A = np.array([[-1e-4, 0.0], [0.0, -1.0], [1e3, 1e3]])
    b = np.array([1e-4, 1.0, 5e3])
    res = solve_qp(H, g, A_in=A, b_in=b)
    np.testing.assert_allclose(res.x, [-1.0, -1.0], atol=1e-9)
