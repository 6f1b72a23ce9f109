"""Acceptance gate: one test and one PASS/FAIL line per criterion A1-A9.

Run alone with ``python3 -m pytest tests/test_acceptance.py``; the lines are
printed in the terminal summary.
"""
import time

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import K_PRE, S_EX
from oracles.francis_bruteforce import francis_oracle
from sampled_regulation.francis import check_nonresonance, solve_francis
from sampled_regulation.hybridsim import (LinearHybridSystem, assemble_closed_loop_post,
                                          assemble_closed_loop_pre, closed_loop_matrices_pre,
                                          extract_outputs, simulate)
from sampled_regulation.instances import random_post_instance
from sampled_regulation.lmi import (LmiAssignment, assemble_analysis_lmis, assemble_post_lmis,
                                    assemble_pre_lmis, m2_of_tau, solve_feasibility, verify_assignment)
from sampled_regulation.model import (RegulatorPre, SamplingSpec, build_augmented_post,
                                      check_sampling_sequence, generate_sampling_sequence)
from sampled_regulation.synthesis import (analysis_resolve, forward_change_of_variables,
                                          recover_controller_pre, recover_observer_post,
                                          synthesize_pre)
from sampled_regulation.verify import (check_assumption4, check_hurwitz, check_property1,
                                       lyapunov_monotonicity, regulation_metrics)

SPEC = SamplingSpec(0.1, 0.3, mode="uniform-random", seed=7)
RESULTS = {}


def record(tag, ok, detail):
    line = f"[{tag}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[tag] = line
    print(line)
    assert ok, line


def strict_margins(problem, report):
    return [abs(c.margin) for c in report.checks if problem.constraint(c.name).strict]


@pytest.fixture(scope="module")
def a1(ext):
    t0 = time.perf_counter()
    problem = assemble_pre_lmis(ext, 0.3, 4.35, 3.5)
    assignment = solve_feasibility(problem)
    rep = verify_assignment(problem, assignment, tol=1e-7)
    return problem, assignment, rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def a3(ext, reference_controller):
    t0 = time.perf_counter()
    P = analysis_resolve(ext, reference_controller, 0.3, 3.5)
    rep = check_property1(P, ext, reference_controller, 0.3, 3.5, tol=1e-8)
    return P, rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def a5(plant, post_stabilizer):
    st = post_stabilizer
    t0 = time.perf_counter()
    aug = build_augmented_post(plant, st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["K"], st["G1"], st["G2"])
    hurwitz, absc = check_hurwitz(aug.frakAc)
    problem = assemble_post_lmis(aug.frakA, aug.H2, 0.3, 1.0, decay_rate=0.1)
    assignment = solve_feasibility(problem)
    Q, W = recover_observer_post(assignment.values, aug.H2)
    rep = check_assumption4(assignment["Pbar"], assignment["Phat"], 1.0, aug.frakA, Q, W, aug.H2, 0.3)
    return aug, hurwitz, absc, assignment, Q, W, rep, time.perf_counter() - t0


def test_A1_design_feasibility(a1):
    problem, assignment, rep, dt = a1
    m = min(strict_margins(problem, rep))
    record("A1", rep.overall and m > 1e-7 and dt < 60,
           f"design inequalities feasible ({assignment.info['solver']}), smallest strict margin {m:.3e}, "
           f"{dt:.2f} s")


def test_A2_pre_regulation(plant):
    res = synthesize_pre(plant, S_EX, SPEC, alpha=4.35, delta=3.5, K=K_PRE)
    loop = assemble_closed_loop_pre(plant, S_EX, res.ext, res.regulator)
    t0 = time.perf_counter()
    horizon = 30.0
    n = loop.physical_system().dim - 2
    arc = simulate(loop, np.zeros(n), [1.0, 0.0], generate_sampling_sequence(SPEC, horizon + 0.3), horizon,
                   0.01, SPEC, coordinates="physical")
    m = regulation_metrics(extract_outputs(arc, loop)["e_p"], arc.t)
    dt = time.perf_counter() - t0
    ok = m.normalized_final_error < 1e-2 and m.fitted_decay_rate < -0.05 and dt < 10
    record("A2", ok, f"final/peak {m.normalized_final_error:.3e}, fitted rate {m.fitted_decay_rate:.3f} 1/s, "
                     f"simulation {dt:.2f} s")


def test_A3_reference_controller(a3):
    P, rep, dt = a3
    m = min(abs(c.margin) for c in rep.checks)
    record("A3", rep.overall and m > 1e-8 and rep.k1 > 0 and rep.k2 > 0 and dt < 60,
           f"reference controller certified by analysis re-solve, smallest margin {m:.3e}, "
           f"k1 {rep.k1:.3e}, k2 {rep.k2:.3e}, {dt:.2f} s")


def test_A4_lyapunov_monotonicity(plant, ext, reference_controller, a3):
    P = a3[0]
    loop = assemble_closed_loop_pre(plant, S_EX, ext, reference_controller)
    ok, rows = lyapunov_monotonicity(loop, P["P1"], P["P2"], 3.5, SPEC, n_arcs=20, horizon=10.0, seed=0,
                                     rel_tol=1e-10)
    worst = max(r["max_jump_increase"] / r["scale"] for r in rows)
    record("A4", ok and len(rows) == 20,
           f"{sum(r['pass'] for r in rows)}/20 arcs: jumps never raise V (worst relative {worst:.2e}), "
           f"every flow interval decreases")


def test_A5_post_feasibility(a5):
    aug, hurwitz, absc, assignment, Q, W, rep, dt = a5
    design = verify_assignment(assignment.problem, assignment)
    record("A5", hurwitz and design.overall and rep.overall and dt < 30,
           f"frakAc abscissa {absc:.3f}, observer inequalities feasible, (Q, W) certified "
           f"(rho {rep.rho:.3e}, W {W[0, 0]:.4f}), {dt:.2f} s")


def test_A6_observer_convergence(plant, post_stabilizer, a5):
    from sampled_regulation.model import RegulatorPost
    st = post_stabilizer
    Q, W = a5[4], a5[5]
    reg = RegulatorPost(st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["G1"], st["G2"], st["K"], Q, W)
    loop = assemble_closed_loop_post(plant, S_EX, reg)
    horizon = 30.0
    n = loop.physical_system().dim - 2
    arc = simulate(loop, np.zeros(n), [1.0, 0.0], generate_sampling_sequence(SPEC, horizon + 0.3), horizon,
                   0.01, SPEC, coordinates="physical")
    out = extract_outputs(arc, loop)
    mo = regulation_metrics(out["ehat_p"] - out["e_p"], arc.t)
    me = regulation_metrics(out["e_p"], arc.t)
    ok = all(m.normalized_final_error < 1e-2 and m.fitted_decay_rate < -0.05 for m in (mo, me))
    record("A6", ok, f"observer error final/peak {mo.normalized_final_error:.2e} rate {mo.fitted_decay_rate:.3f}; "
                     f"e_p final/peak {me.normalized_final_error:.2e} rate {me.fitted_decay_rate:.3f}")


def test_A7_hurwitz_implies_nonresonance():
    rng = np.random.default_rng(2024)
    passed = 0
    for _ in range(50):
        d = random_post_instance(rng)
        aug = build_augmented_post(d["plant"], d["A_k"], d["B_k"], d["C_k"], d["D_k"], d["K"], d["G1"], d["G2"])
        assert check_hurwitz(aug.frakAc)[0]
        passed += bool(check_nonresonance(aug.A_cl, aug.B_cl, aug.H1, d["S"])[0])
    record("A7", passed == 50, f"{passed}/50 random instances with Hurwitz frakAc are nonresonant")


def _francis_suite(rng):
    worst, count = 0.0, 0
    while count < 100:
        n, q, m = (int(v) for v in rng.integers(1, 5, size=3))
        A, B, C = rng.standard_normal((n, n)), rng.standard_normal((n, m)), rng.standard_normal((m, n))
        E, F, S = rng.standard_normal((n, q)), rng.standard_normal((m, q)), rng.standard_normal((q, q))
        if not check_nonresonance(A, B, C, S)[0]:
            continue
        sol = solve_francis(A, B, C, E, F, S)
        X, R = francis_oracle(A, B, C, E, F, S)
        worst = max(worst, np.abs(sol.X - X).max(), np.abs(sol.R - R).max())
        count += 1
    return worst


def _convexity_suite(rng, assignments):
    worst = -np.inf
    for a in assignments:
        T2 = a.problem.meta["T2"]
        for tau in rng.uniform(0.0, T2, 100):
            worst = max(worst, np.linalg.eigvalsh(m2_of_tau(a, tau))[-1])
    return worst


def _round_trip_suite(rng, ext):
    n, worst = ext.n, 0.0
    count = 0
    while count < 100:
        X = rng.standard_normal((n, n))
        X = X @ X.T + n * np.eye(n)
        Y = rng.standard_normal((n, n))
        Y = Y @ Y.T + n * np.eye(n)
        V = rng.standard_normal((n, n)) + 3 * np.eye(n)
        U = (np.eye(n) - X @ Y) @ np.linalg.inv(V).T
        if sla.svdvals(V)[-1] < 0.1 or sla.svdvals(U)[-1] < 0.1:
            continue
        reg = RegulatorPre(*(rng.standard_normal(s) for s in ((n, n), (n, 1), (1, n), (1, 1), (1, 1), (1, n))))
        K1, K2, K3, K4 = forward_change_of_variables(reg, X, Y, U, V, ext)
        back, _ = recover_controller_pre({"X": X, "Y": Y, "V": V, "K1": K1, "K2": K2, "K3": K3, "K4": K4,
                                          "P2": np.eye(1), "Z1": reg.H, "Z2": reg.E}, ext)
        worst = max(worst, max(np.abs(getattr(back, k) - getattr(reg, k)).max()
                               for k in ("A_c", "B_c", "C_c", "D_c")))
        count += 1
    return worst


def _integrator_suite(rng):
    worst = 0.0
    for n in range(1, 9):
        for _ in range(4):
            M = rng.standard_normal((n, n))
            F = M - (np.max(np.linalg.eigvals(M).real) + 0.2) * np.eye(n)
            x0 = rng.standard_normal(n)
            arc = simulate(LinearHybridSystem(F, np.eye(n), tuple(f"x{i}" for i in range(n))), x0, [], [],
                           1.0, 0.01)
            ref = np.array([sla.expm(F * t) @ x0 for t in arc.t])
            worst = max(worst, np.abs(arc.x[:, :-1] - ref).max())
    return worst


def test_A8_oracle_suites(ext, reference_controller, a1, a3, a5):
    rng = np.random.default_rng(8)
    e_fr = _francis_suite(rng)
    Abb, Bbb, Jbb, H = closed_loop_matrices_pre(ext, reference_controller)
    analysis = LmiAssignment(assemble_analysis_lmis(Abb, Bbb, Jbb, H, 0.3, 3.5), a3[0])
    e_cvx = _convexity_suite(rng, [a1[1], a5[3], analysis])
    e_rt = _round_trip_suite(rng, ext)
    e_int = _integrator_suite(rng)
    ok = e_fr <= 1e-8 and e_cvx <= 1e-9 and e_rt <= 1e-8 and e_int <= 1e-8
    record("A8", ok, f"Francis vs Kronecker {e_fr:.1e}; m2 interior max eig {e_cvx:.2e}; "
                     f"change of variables {e_rt:.1e}; integrator vs expm {e_int:.1e}")


def test_A9_sampling_fuzz():
    rng = np.random.default_rng(9)
    modes = ("periodic", "uniform-random", "worst-case-max", "explicit-list")
    counts = dict.fromkeys(modes, 0)
    for i in range(10_000):
        mode = modes[i % 4]
        T1 = float(rng.uniform(1e-3, 1.0))
        T2 = T1 * float(rng.uniform(1.01, 5.0))
        horizon = float(rng.uniform(0.5, 40.0)) * T2
        if mode == "periodic":
            spec = SamplingSpec(T1, T2, mode=mode, period=float(rng.uniform(T1, T2)))
        elif mode == "explicit-list":
            base = generate_sampling_sequence(SamplingSpec(T1, T2, seed=i), horizon + T2)
            spec = SamplingSpec(T1, T2, mode=mode, explicit_times=tuple(base))
        else:
            spec = SamplingSpec(T1, T2, mode=mode, seed=i)
        times = generate_sampling_sequence(spec, horizon)
        check_sampling_sequence(times, T1, T2, ulps=0)
        counts[mode] += 1
    record("A9", sum(counts.values()) == 10_000,
           "10000 sequences satisfy the dwell bounds exactly (" +
           ", ".join(f"{k} {v}" for k, v in counts.items()) + ")")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
