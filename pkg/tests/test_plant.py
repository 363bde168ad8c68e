import mpmath as mp
import numpy as np
import pytest

from qtune.plant import (PENDULUM_E, LinearPlant, PendulumParams, pendulum_energy,
                         pendulum_mass_matrix, pendulum_nonlinear, pendulum_rhs, perturbed,
                         verify_linearization)
from qtune.sim import rk4_step


def accel_oracle(p, x, u):
    """Accelerations from the two coupled equations, explicit 2x2 inverse at 50 digits."""
    mp.mp.dps = 50
    th1, th2, d1, d2 = (mp.mpf(v) for v in x)
    P = {k: mp.mpf(v) for k, v in p.as_dict().items()}
    mlr = P["m_p"] * P["l"] * P["r"]
    tau = P["k_m"] / P["R_m"] * (mp.mpf(u) - P["k_m"] * d1)
    # M th1'' - mlr cos th2 th2'' = f1 ;  -mlr cos th2 th1'' + J_p th2'' = f2
    a = P["J_r"] + P["J_p"] * mp.sin(th2) ** 2
    b = -mlr * mp.cos(th2)
    c = b
    d = P["J_p"]
    f1 = -P["J_p"] * d1 * d2 * mp.sin(2 * th2) - mlr * d2 ** 2 * mp.sin(th2) - P["b_r"] * d1 + tau
    f2 = mp.mpf("0.5") * P["J_p"] * d1 ** 2 * mp.sin(2 * th2) + P["m_p"] * P["g"] * P["l"] * mp.sin(th2) - P["b_p"] * d2
    det = a * d - b * c
    return np.array([float((d * f1 - b * f2) / det), float((-c * f1 + a * f2) / det)])


def test_origin_is_equilibrium(params):
    dx = pendulum_rhs(params, np.zeros(4), 0.0)
    assert np.array_equal(dx, np.zeros(4))


def test_hanging_equilibrium(params):
    dx = pendulum_rhs(params, [0.0, np.pi, 0.0, 0.0], 0.0)
    # sin(pi) is 1.2e-16 in floating point, amplified by m g l / J_t
    assert abs(dx[3]) < 1e-12 and abs(dx[2]) < 1e-12


def test_accelerations_match_explicit_inverse(params):
    x = [0.1, 0.05, 0.2, -0.1]
    dx = pendulum_rhs(params, x, 0.5)
    ref = accel_oracle(params, x, 0.5)
    assert np.allclose(dx[2:], ref, rtol=1e-10, atol=0)
    assert np.array_equal(dx[:2], [0.2, -0.1])


def test_accelerations_random_states(params, rng):
    for _ in range(20):
        x = rng.uniform(-1, 1, 4) * [3, 1.2, 5, 5]
        u = rng.uniform(-5, 5)
        assert np.allclose(pendulum_rhs(params, x, u)[2:], accel_oracle(params, x, u), rtol=1e-10, atol=1e-12)


def test_mass_matrix_determinant_at_origin(params):
    assert np.linalg.det(pendulum_mass_matrix(params, 0.0)) == pytest.approx(params.J_t, rel=1e-12)


def test_energy_conserved_without_damping(params):
    p = params.without_damping()
    x = np.array([0.0, 0.4, 1.0, 0.0])
    E0 = pendulum_energy(p, x)
    h = 1e-4
    for _ in range(10000):
        x = rk4_step(lambda t, s: pendulum_rhs(p, s, 0.0), 0.0, x, h)
    assert abs(pendulum_energy(p, x) - E0) < 1e-9 * max(1.0, abs(E0))


def test_energy_decays_with_damping(params):
    x = np.array([0.0, 0.4, 1.0, 0.0])
    E0 = pendulum_energy(params, x)
    for _ in range(2000):
        x = rk4_step(lambda t, s: pendulum_rhs(params, s, 0.0), 0.0, x, 1e-4)
    assert pendulum_energy(params, x) < E0


def test_disturbance_enters_through_B1(params):
    w = np.array([1.0, 2.0, 3.0, 4.0])
    dx = pendulum_rhs(params, np.zeros(4), 0.0, w)
    assert np.allclose(dx, np.diag([0.012, 0.012, 1.0, 1.0]) @ w)


def test_linearization_structure(lp):
    assert np.array_equal(lp.A[:2], [[0, 0, 1, 0], [0, 0, 0, 1]])
    assert np.array_equal(lp.B2[:2], np.zeros((2, 1)))
    assert np.array_equal(lp.E, PENDULUM_E)


def test_linearization_matches_finite_differences(params, lp):
    rep = verify_linearization(pendulum_nonlinear(params), lp)
    assert rep.errors["A"] <= 1e-5 and rep.errors["B2"] <= 1e-5
    assert rep.max_error <= 1e-5


def test_linear_plant_is_its_own_linearization(lp):
    rep = verify_linearization(lp.as_nonlinear(), lp)
    assert rep.max_error < 1e-8


def test_injected_fault_is_located(params, lp):
    A = lp.A.copy()
    A[2, 1] *= 1.1
    rep = verify_linearization(pendulum_nonlinear(params), perturbed(lp, A=A))
    assert rep.worst_entry["A"] == (2, 1)
    assert rep.errors["A"] == pytest.approx(0.1, rel=1e-3)


def test_assumptions_hold_for_pendulum(lp):
    lp.check_assumptions()
    assert np.max(np.linalg.eigvals(lp.A).real) > 0


def test_cross_term_rejected(lp):
    bad = perturbed(lp, C1=np.ones((2, 4)), D12=np.ones((2, 1)))
    with pytest.raises(ValueError, match="C1"):
        bad.check_assumptions()


def test_params_validation():
    with pytest.raises(ValueError):
        PendulumParams(m_p=-1.0)
    with pytest.raises(ValueError):
        PendulumParams(J_p=1e-9)


def test_linear_plant_dimension_check(lp):
    with pytest.raises(ValueError):
        LinearPlant(A=lp.A, B1=lp.B1, B2=lp.B2[:3], C1=lp.C1, C2=lp.C2, D12=lp.D12, D21=lp.D21, E=lp.E)
