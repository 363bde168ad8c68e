"""End-to-end acceptance checks; each prints one PASS/FAIL line in the summary."""
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.signal import place_poles

from qtune.config import Config, with_overrides
from qtune.controller import closed_loop_matrix, transfer_from_ur
from qtune.estuner import EsParams, prescan_delta, tune
from qtune.linalg import care_residual, is_hurwitz, kleinman_care, solve_care
from qtune.pipeline import build_design, build_scenario, design_report, lqt_interpretations
from qtune.plant import PendulumParams, pendulum_linearize, pendulum_nonlinear, pendulum_rhs, verify_linearization
from qtune.sim import DIVERGED_COST, LoopRunner, sweep_alpha
from qtune.synthesis import (InfeasibleGammaError, build_augmented_plant, closed_loop_hinf, gamma_optimal,
                             hinf_norm, synthesize_qfilter)

from conftest import random_stable, report_criterion
from test_estuner import replay
from test_sim import exact_linear_states, linear_scenario
from test_synthesis import sweep_oracle

PRESETS = ("caseA_w1", "caseA_w2", "caseB_w1", "caseB_w2")


def set_distance(a, b):
    C = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    r, c = linear_sum_assignment(C)
    return C[r, c].max()


def test_criterion_1_care():
    rng = np.random.default_rng(1)
    worst_res = worst_orc = 0.0
    all_hurwitz = True
    t0 = time.perf_counter()
    for _ in range(500):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, min(n, 3) + 1))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((int(rng.integers(1, n + 1)), n))
        Q = C.T @ C
        Rh = rng.standard_normal((m, m))
        R = Rh @ Rh.T + 0.1 * np.eye(m)
        P = solve_care(A, B, Q, R)
        scale = 1 + np.linalg.norm(P)
        worst_res = max(worst_res, np.linalg.norm(care_residual(A, B, Q, R, P)) / scale)
        all_hurwitz &= is_hurwitz(A - B @ np.linalg.solve(R, B.T @ P))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            K0 = place_poles(A, B, -1.0 - 0.5 * np.arange(n) - rng.uniform(0, 0.1, n)).gain_matrix
        worst_orc = max(worst_orc, np.linalg.norm(P - kleinman_care(A, B, Q, R, K0)) / scale)
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-8 and worst_orc <= 1e-8 and all_hurwitz and elapsed < 10
    report_criterion(1, ok, f"500 systems: residual {worst_res:.1e}, Kleinman gap {worst_orc:.1e}, "
                            f"Hurwitz {all_hurwitz}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_linearization():
    p = PendulumParams()
    rep = verify_linearization(pendulum_nonlinear(p), pendulum_linearize(p))
    origin = np.array_equal(pendulum_rhs(p, np.zeros(4), 0.0, np.zeros(4)), np.zeros(4))
    ok = rep.errors["A"] <= 1e-5 and rep.errors["B2"] <= 1e-5 and origin
    report_criterion(2, ok, f"A rel err {rep.errors['A']:.1e}, B2 rel err {rep.errors['B2']:.1e}, "
                            f"rhs(0,0,0)=0 exactly: {origin}")
    assert ok


def test_criterion_3_lqt_poles():
    cfg = Config()
    rows = lqt_interpretations(cfg)
    primary, alternate = rows
    met = primary.get("within_2pct", False)
    rep = design_report(cfg, build_design(cfg))
    recorded = [r["reading"] for r in rep["reference_values"]["lqt_interpretations"]] == [r["reading"] for r in rows]
    documented = all("max_rel_err" in r for r in rows) and recorded
    ok = met or documented
    how = "2% target met" if met else "2% target missed; alternate reading evaluated and both recorded in the design report"
    report_criterion(3, ok, f"{how} (Q=225,R=2: {primary['max_rel_err']:.1%} off; "
                            f"swapped: {alternate['max_rel_err']:.1%} off)")
    assert ok


def test_criterion_4_hinf():
    design = build_design(Config())
    gp = build_augmented_plant(design.lp, design.lqt, design.obs)
    try:
        q = synthesize_qfilter(gp, 0.21)
        Acl, Bcl, Ccl, Dcl = closed_loop_hinf(gp, q.A_q, q.B_q, q.F_q)
        norm = hinf_norm(Acl, Bcl, Ccl, Dcl)
        feasible, part_a = norm < 0.21, f"gamma=0.21 feasible, norm {norm:.4f}"
    except InfeasibleGammaError:
        g_opt = gamma_optimal(gp, rtol=1e-6)
        feasible, part_a = False, f"gamma=0.21 infeasible (optimal level {g_opt:.4f})"
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        A, B, C, D = random_stable(rng, n, int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        ref = sweep_oracle(A, B, C, D)
        worst = max(worst, abs(hinf_norm(A, B, C, D) - ref) / ref)
    sweep_ok = worst <= 1e-4
    ok = feasible and sweep_ok
    report_criterion(4, ok, f"{part_a}; hinf_norm vs 1e6-point sweep on 50 systems: worst rel gap {worst:.1e}")
    assert sweep_ok, "norm oracle mismatch"
    assert feasible, part_a


def test_criterion_5_spectrum_invariance():
    design = build_design(Config())
    spectra = [np.linalg.eigvals(closed_loop_matrix(design.controller(a), design.lp)[0]) for a in (0, 1, -3, 50)]
    dist = max(set_distance(spectra[0], s) for s in spectra[1:])
    max_re = max(s.real.max() for s in spectra)
    ok = dist <= 1e-8 and max_re < 0
    report_criterion(5, ok, f"set distance across alpha in {{0,1,-3,50}}: {dist:.1e}, max Re eig {max_re:.2f}")
    assert ok


def test_criterion_6_feedforward_invariance():
    design = build_design(Config())
    w = np.logspace(-2, 3, 200)
    gap = 0.0
    for ch in ("u", "y", "ytilde"):
        G0 = transfer_from_ur(design.controller(0.0), design.lp, ch, w)
        G1 = transfer_from_ur(design.controller(1.0), design.lp, ch, w)
        gap = max(gap, np.abs(G0 - G1).max())
    ok = gap <= 1e-9
    report_criterion(6, ok, f"u_r -> u, y, ytilde at 200 frequencies: max |T(alpha=0) - T(alpha=1)| {gap:.1e}")
    assert ok


def test_criterion_7_simulator_order():
    design = build_design(Config())
    T = 1.0
    times = np.arange(0, 21) * 0.05
    ref = exact_linear_states(design, 0.8, T, times)
    errs = []
    for h in (2e-4, 1e-4):
        tr = LoopRunner(linear_scenario(design, T, h), design).run(0.8)
        idx = np.rint(times / h).astype(int)
        errs.append(np.abs(tr.x[idx] - ref).max() / np.abs(ref).max())
    ratio = errs[0] / errs[1]
    ok = 12 <= ratio <= 20
    report_criterion(7, ok, f"global error {errs[0]:.2e} (h=2e-4) vs {errs[1]:.2e} (h=1e-4), ratio {ratio:.2f}")
    assert ok


def test_criterion_8_es_synthetic():
    cost = lambda a: (a - 1.3) ** 2 + 0.1
    p0 = EsParams(a=0.8, h=0.1, beta=0.015, k_max=200)
    delta, _ = prescan_delta(cost, p0)
    p = EsParams(a=0.8, h=0.1, beta=0.015, delta=delta, k_max=200)
    res = tune(cost, p)
    first = next((r.k for r in res.history if abs(r.alpha_hat - 1.3) <= 0.025), None)
    final_err = abs(res.alpha_star - 1.3)
    bitwise = [(r.zeta, r.alpha_hat, r.alpha) for r in res.history] == replay(res.history, p.a, p.h, p.beta, p.delta)
    ok = final_err <= 0.025 and bitwise
    report_criterion(8, ok, f"prescan delta {delta:.1f}; |alpha_hat - 1.3| = {final_err:.1e} after 200 "
                            f"(within 0.025 from k={first}); replay bitwise {bitwise}")
    assert ok


@pytest.mark.slow
def test_criterion_9_end_to_end():
    base = Config()
    lines, ok_all, es_time = [], True, 0.0
    for preset in PRESETS:
        cfg = with_overrides(base, scenario={"preset": preset})
        design = build_design(cfg)
        runner = LoopRunner(build_scenario(cfg, design.lp), design)
        es = cfg.es
        t0 = time.perf_counter()
        p = EsParams(a=es.a, h=es.h, beta=es.beta, k_max=es.k_max, alpha0=1.0)
        delta, _ = prescan_delta(runner.cost, p, spacing=es.probe_spacing, contraction=es.contraction)
        p = EsParams(a=es.a, h=es.h, beta=es.beta, delta=delta, k_max=es.k_max, alpha0=1.0)
        res = tune(runner.cost, p)
        es_time += time.perf_counter() - t0
        a_star = res.alpha_star
        J_star, J0, J1 = runner.cost(a_star), runner.cost(0.0), runner.cost(1.0)
        coarse = sweep_alpha(runner.sc, design, np.round(np.arange(0, 2.51, 0.1), 10))
        a_c = min((c for c in coarse if c[1] < DIVERGED_COST), key=lambda c: c[1])[0]
        fine = sweep_alpha(runner.sc, design, np.round(np.arange(a_c - 0.15, a_c + 0.1501, 0.01), 10))
        a_grid = min(fine + coarse, key=lambda c: c[1])[0]
        monotone = bool(np.all(np.diff(res.best_so_far) <= 0))
        checks = {
            "J*<J0": J_star < J0, "J*<J1": J_star < J1, "best-so-far monotone": monotone,
            "alpha* in [1,1.6]": 1.0 <= a_star <= 1.6, "grid brackets": abs(a_grid - a_star) <= 0.05,
        }
        ok = all(checks.values())
        ok_all &= ok
        failed = [k for k, v in checks.items() if not v]
        lines.append(f"{preset}: alpha*={a_star:.3f} grid={a_grid:.2f} J(alpha*)={J_star:.3f} J(0)={J0:.3f} "
                     f"J(1)={J1:.3f}" + (f" FAILED {failed}" if failed else ""))
    timing = es_time < 30 * 60
    ok_all &= timing
    report_criterion(9, ok_all, f"ES campaign {es_time:.0f} s; " + "; ".join(lines))
    assert ok_all
