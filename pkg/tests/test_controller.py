import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import linear_sum_assignment

from qtune.controller import closed_loop_matrix, transfer_from_ur, ur_interconnection
from qtune.linalg import is_hurwitz

ALPHAS = (0.0, 1.0, -3.0, 50.0)


def set_distance(a, b):
    C = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    r, c = linear_sum_assignment(C)
    return C[r, c].max()


def signal_flow(design, alpha):
    """Tracking loop coded block by block; returns d/dt of (x, x_q, x_hat) given u_r."""
    lp, F, L, q = design.lp, design.lqt.F, design.obs.L, design.qfilter
    n, nq = lp.n, q.n_q

    def f(s, u_r):
        x, xq, xh = s[:n], s[n:n + nq], s[n + nq:]
        y = lp.C2 @ x
        res = lp.C2 @ xh - y
        u = F @ xh + alpha * (q.F_q @ xq) + u_r
        return np.concatenate([lp.A @ x + lp.B2 @ u,
                               q.A_q @ xq + q.B_q @ res,
                               lp.A @ xh + lp.B2 @ u + L @ res])
    return f


@pytest.mark.parametrize("alpha", ALPHAS)
def test_closed_loop_matches_signal_flow(design, alpha):
    ctrl = design.controller(alpha)
    _, A_cl, _ = closed_loop_matrix(ctrl, design.lp)
    f = signal_flow(design, alpha)
    N = A_cl.shape[0]
    J = np.column_stack([f(e, np.zeros(1)) for e in np.eye(N)])
    assert np.abs(J - A_cl).max() <= 1e-12 * np.abs(A_cl).max()
    B = np.vstack([design.lp.B2, ctrl.B_r])
    assert np.allclose(f(np.zeros(N), np.ones(1)), B[:, 0], rtol=0, atol=1e-14)


def test_spectrum_invariant_in_alpha(design):
    lp = design.lp
    ref = np.concatenate([np.linalg.eigvals(lp.A + lp.B2 @ design.lqt.F),
                          np.linalg.eigvals(design.qfilter.A_q),
                          design.obs.eigenvalues(lp)])
    for a in ALPHAS:
        A_bar, A_cl, _ = closed_loop_matrix(design.controller(a), lp)
        n, nq = lp.n, design.qfilter.n_q
        assert np.abs(A_bar[n:n + nq, :n]).max() == 0.0
        assert np.abs(A_bar[n + nq:, :n + nq]).max() < 1e-9 * np.abs(A_bar).max()
        assert set_distance(np.linalg.eigvals(A_bar), ref) <= 1e-8 * np.abs(ref).max()
        assert is_hurwitz(A_bar)


def test_untransformed_loop_is_similar(design):
    for a in ALPHAS:
        A_bar, A_cl, _ = closed_loop_matrix(design.controller(a), design.lp)
        c_bar, c_cl = np.poly(A_bar), np.poly(A_cl)
        assert np.all(np.abs(c_bar - c_cl) <= 1e-8 * np.abs(c_cl) + 1e-300)


def test_alpha_zero_is_pure_lqt(design):
    ctrl = design.controller(0.0)
    assert not np.any(ctrl.F_c[:, :ctrl.n_q])
    assert np.array_equal(ctrl.F_c[:, ctrl.n_q:], design.lqt.F)


def test_alpha_one_uses_unscaled_filter(design):
    ctrl = design.controller(1.0)
    assert np.array_equal(ctrl.F_c[:, :ctrl.n_q], design.qfilter.F_q)


@pytest.mark.parametrize("channel", ["u", "y", "ytilde"])
def test_feedforward_response_invariant_in_alpha(design, channel):
    w = np.logspace(-2, 3, 200)
    G0 = transfer_from_ur(design.controller(0.0), design.lp, channel, w)
    G1 = transfer_from_ur(design.controller(1.0), design.lp, channel, w)
    assert np.abs(G0 - G1).max() <= 1e-9 * max(1.0, np.abs(G0).max())


def test_dc_gain_is_static_solve(design):
    ctrl = design.controller(0.7)
    A, B, C, D = ur_interconnection(ctrl, design.lp, "u")
    x_ss = np.linalg.solve(A, -B)
    G = transfer_from_ur(ctrl, design.lp, "u", [0.0])[0]
    assert np.allclose(G, C @ x_ss + D, rtol=1e-10)


@pytest.mark.parametrize("w", [1.0, 5.0, 30.0])
def test_response_matches_time_domain_steady_state(design, w):
    ctrl = design.controller(1.0)
    A, B, C, D = ur_interconnection(ctrl, design.lp, "ytilde")
    T_end = 4.0 + 2 * np.pi / w * 3
    sol = solve_ivp(lambda t, s: A @ s + B[:, 0] * np.sin(w * t), (0, T_end), np.zeros(A.shape[0]),
                    method="DOP853", rtol=1e-11, atol=1e-13, dense_output=True)
    t = np.linspace(T_end - 2 * 2 * np.pi / w, T_end, 400)
    y = (C @ sol.sol(t))[0]
    coef, *_ = np.linalg.lstsq(np.column_stack([np.sin(w * t), np.cos(w * t)]), y, rcond=None)
    G = transfer_from_ur(ctrl, design.lp, "ytilde", [w])[0, 0, 0]
    assert coef[0] + 1j * coef[1] == pytest.approx(G, rel=1e-6, abs=1e-9)


def test_direct_feedthrough_of_ur(design):
    ctrl = design.controller(1.0)
    u = ctrl.step(np.zeros(2), [1.0], 1e-4)
    assert u[0] == 1.0


def test_equilibrium_keeps_zero(design):
    ctrl = design.controller(1.0)
    for _ in range(10):
        assert ctrl.step(np.zeros(2), [0.0], 1e-4)[0] == 0.0
    assert not np.any(ctrl.x_c)


def test_step_matches_exact_discretization(design):
    """RK4 with held inputs vs the exact zero-order-hold map; global error O(h^4)."""
    ctrl = design.controller(1.0)
    Ac = ctrl.A_c
    rng = np.random.default_rng(3)
    ys = rng.standard_normal((100, 2)) * 0.01
    urs = rng.standard_normal((100, 1))
    errs = []
    for h in (1e-3, 5e-4):
        reps = int(round(1e-3 / h))
        Phi = expm(np.block([[Ac, np.eye(Ac.shape[0])], [np.zeros_like(Ac), np.zeros_like(Ac)]]) * h)
        Ad, Gd = Phi[:Ac.shape[0], :Ac.shape[0]], Phi[:Ac.shape[0], Ac.shape[0]:]
        ctrl.reset()
        x = np.zeros(Ac.shape[0])
        for k in range(100):
            for _ in range(reps):
                drive = ctrl.B_c @ ys[k] + ctrl.B_r @ urs[k]
                ctrl.step(ys[k], urs[k], h)
                x = Ad @ x + Gd @ drive
        errs.append(np.abs(ctrl.x_c - x).max() / np.abs(x).max())
    assert errs[0] < 1e-4
    assert 12 <= errs[0] / errs[1] <= 20


def test_step_rejects_nonfinite(design):
    with pytest.raises(FloatingPointError):
        design.controller(1.0).step([np.nan, 0.0], [0.0], 1e-4)


def test_zero_residual_keeps_filter_inert(design):
    """Model-exact, disturbance-free loop: x_q stays 0 for any reference."""
    ctrl = design.controller(1.0)
    _, A_cl, _ = closed_loop_matrix(ctrl, design.lp)
    B = np.vstack([design.lp.B2, ctrl.B_r])
    s = np.zeros(A_cl.shape[0])
    for k in range(200):
        s = s + 1e-3 * (A_cl @ s + B[:, 0] * np.sin(0.01 * k))
    nq, n = ctrl.n_q, design.lp.n
    assert np.abs(s[n:n + nq]).max() < 1e-12 * max(1.0, np.abs(s).max())
