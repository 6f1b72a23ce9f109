import math

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import S_EX
from sampled_regulation.exceptions import DimensionError, SimulationError
from sampled_regulation.hybridsim import (LinearHybridSystem, arc_to_error, assemble_closed_loop_post,
                                          assemble_closed_loop_pre, closed_loop_matrices_pre,
                                          extract_outputs, lyapunov_trace, read_arc_csv, simulate,
                                          validate_arc, write_arc_csv)
from sampled_regulation.model import (PlantModel, RegulatorPre, SamplingSpec, build_extended_plant_pre,
                                      generate_sampling_sequence)
from sampled_regulation.verify import check_assumption4, lyapunov_monotonicity, regulation_metrics

SPEC = SamplingSpec(0.1, 0.3, seed=7)


@pytest.fixture(scope="module")
def ref_loop(plant, ext, reference_controller):
    return assemble_closed_loop_pre(plant, S_EX, ext, reference_controller)


@pytest.fixture(scope="module")
def post_loop(plant, post_result):
    return assemble_closed_loop_post(plant, S_EX, post_result.regulator)


def times_for(horizon, spec=SPEC):
    return generate_sampling_sequence(spec, horizon + spec.T2)


def test_zero_regulator_identity_plant():
    plant = PlantModel(np.eye(2), [[0.0], [1.0]], np.zeros((2, 1)), [[1.0, 0.0]], np.zeros((1, 1)))
    ext = build_extended_plant_pre(plant, [[1.0]], [[1.0]], [[0.0]])
    assert np.array_equal(ext.A, np.eye(3))
    n = ext.n
    reg = RegulatorPre(np.zeros((n, n)), np.zeros((n, 1)), np.zeros((1, n)), np.zeros((1, 1)),
                       np.zeros((1, 1)), np.zeros((1, n)))
    Abb = closed_loop_matrices_pre(ext, reg)[0]
    assert np.array_equal(Abb, sla.block_diag(np.eye(n), np.zeros((n, n))))


def test_reference_loop_shapes(ref_loop):
    assert ref_loop.Abb.shape == (8, 8) and ref_loop.Bbb.shape == (8, 1) and ref_loop.Jbb.shape == (1, 8)


def test_Jbb_finite_difference(ref_loop):
    """d/dt (theta - e_p) along the physical flow equals Jbb x~ + H theta~."""
    rng = np.random.default_rng(1)
    phys = ref_loop.physical_system()
    h = 1e-6
    for _ in range(5):
        s = rng.standard_normal(phys.dim)
        plus, minus = sla.expm(phys.F * h) @ s, sla.expm(-phys.F * h) @ s
        e_plus, e_minus, e0 = ref_loop.to_error(plus), ref_loop.to_error(minus), ref_loop.to_error(s)
        N = ref_loop.N
        fd = (e_plus[N] - e_minus[N]) / (2 * h)
        exact = (ref_loop.Jbb @ e0[:N] + ref_loop.H @ e0[N:N + 1]).item()
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-6)


def test_coordinate_maps_inverse(ref_loop, post_loop):
    rng = np.random.default_rng(2)
    for loop in (ref_loop, post_loop):
        s = rng.standard_normal((4, loop.error_system().dim))
        assert np.allclose(loop.to_error(loop.to_physical(s)), s, atol=1e-10)


def test_error_and_physical_flows_agree(ref_loop, post_loop):
    rng = np.random.default_rng(3)
    for loop in (ref_loop, post_loop):
        es, ps = loop.error_system(), loop.physical_system()
        s = rng.standard_normal(es.dim)
        p = loop.to_physical(s)
        assert np.allclose(loop.to_error(ps.F @ p), es.F @ s, atol=1e-9 * max(1.0, np.abs(ps.F).max()))
        assert np.allclose(loop.to_error(ps.J @ p), es.J @ s, atol=1e-9)


@pytest.mark.parametrize("which", ["pre", "post"])
def test_zero_arc(which, ref_loop, post_loop):
    loop = ref_loop if which == "pre" else post_loop
    q = S_EX.shape[0]
    arc = simulate(loop, np.zeros(loop.error_system().dim - q), np.zeros(q), times_for(5.0), 5.0, 0.01, SPEC)
    assert np.all(arc.x[:, :-1] == 0.0)
    out = extract_outputs(arc, loop)
    assert np.all(out["e_p"] == 0.0)
    tr = lyapunov_trace(arc, np.eye(arc.blocks["x"].stop - arc.blocks["x"].start), np.eye(1), 1.0)
    assert np.all(tr.V == 0.0)


def test_pure_flow_closed_form():
    sysm = LinearHybridSystem([[-1.0]], [[1.0]], ("x",))
    arc = simulate(sysm, [1.0], [], [], 1.0, 0.01)
    assert arc.t[-1] == 1.0 and len(arc.jump_indices) == 0
    assert arc.x[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_dt_too_coarse(ref_loop):
    with pytest.raises(SimulationError):
        simulate(ref_loop, np.zeros(9), np.zeros(2), times_for(1.0), 1.0, 0.02, SPEC)


def test_wrong_initial_dimension(ref_loop):
    with pytest.raises(DimensionError):
        simulate(ref_loop, np.zeros(3), np.zeros(2), times_for(1.0), 1.0, 0.01, SPEC)


def test_nonfinite_aborts():
    sysm = LinearHybridSystem([[400.0]], [[1.0]], ("x",))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(SimulationError, match="non-finite"):
        simulate(sysm, [1.0], [], [], 10.0, 0.01)


def test_arc_invariants_and_jump_semantics(ref_loop):
    arc = simulate(ref_loop, np.zeros(9), [1.0, 0.0], times_for(10.0), 10.0, 0.01, SPEC)
    assert validate_arc(arc, SPEC.T1, SPEC.T2) == []
    ji = arc.jump_indices
    assert len(ji) > 30
    assert np.all(arc.t[ji] == arc.t[ji - 1]) and np.all(arc.j[ji] == arc.j[ji - 1] + 1)
    assert np.all(arc.block("thetat")[ji] == 0.0)
    # physical arc: theta+ = e_p exactly
    phys = simulate(ref_loop, ref_loop.to_physical(np.r_[np.zeros(9), 1.0, 0.0])[:-2], [1.0, 0.0],
                    times_for(10.0), 10.0, 0.01, SPEC, coordinates="physical")
    out = extract_outputs(phys, ref_loop)
    ji = phys.jump_indices
    assert np.allclose(out["theta"][ji], out["e_p"][ji - 1], rtol=0, atol=1e-13)
    assert np.array_equal(out["e_p"][ji], out["e_p"][ji - 1])


def test_post_jump_semantics(post_loop, plant):
    q = 2
    x0 = np.r_[np.zeros(post_loop.n), np.ones(post_loop.n), [0.5]]
    arc = simulate(post_loop, x0, [1.0, 0.0], times_for(5.0), 5.0, 0.01, SPEC)
    assert np.all(arc.block("chit2")[arc.jump_indices] == 0.0)
    phys = simulate(post_loop, post_loop.to_physical(np.r_[x0, 1.0, 0.0])[:-q], [1.0, 0.0],
                    times_for(5.0), 5.0, 0.01, SPEC, coordinates="physical")
    ji = phys.jump_indices
    out = extract_outputs(phys, post_loop)
    transmitted = out["e_p"][ji] - out["ehat_p"][ji]
    assert np.allclose(phys.block("chi2")[ji], transmitted, rtol=0, atol=1e-12)
    assert validate_arc(phys, SPEC.T1, SPEC.T2) == []


def test_e_p_definition(ref_loop, plant):
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal(9)
    arc = simulate(ref_loop, x0, [1.0, 0.0], times_for(3.0), 3.0, 0.01, SPEC)
    out = extract_outputs(arc, ref_loop)
    phys = ref_loop.to_physical(arc.x[:, :-1])
    direct = phys[:, :2] @ plant.C_p.T - phys[:, -2:] @ plant.F_p.T
    assert np.max(np.abs(out["e_p"] - direct)) <= 1e-12 * max(1.0, np.abs(direct).max())


def test_extract_outputs_label_mismatch(ref_loop, post_loop):
    arc = simulate(ref_loop, np.zeros(9), [1.0, 0.0], times_for(1.0), 1.0, 0.01, SPEC)
    with pytest.raises(SimulationError):
        extract_outputs(arc, post_loop)


def test_integrator_vs_expm():
    rng = np.random.default_rng(8)
    for n in range(1, 9):
        for _ in range(3):
            M = rng.standard_normal((n, n))
            F = M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(n)
            x0 = rng.standard_normal(n)
            arc = simulate(LinearHybridSystem(F, np.eye(n), tuple(f"x{i}" for i in range(n))),
                           x0, [], [], 1.0, 0.01)
            ref = np.array([sla.expm(F * t) @ x0 for t in arc.t])
            assert np.max(np.abs(arc.x[:, :-1] - ref)) < 1e-8


def test_exosystem_norm_invariant(ref_loop):
    arc = simulate(ref_loop, np.zeros(9), [0.6, -0.8], times_for(10.0), 10.0, 0.01, SPEC)
    wn = np.linalg.norm(arc.block("w"), axis=1)
    assert np.max(np.abs(wn - 1.0)) < 1e-8


def test_lyapunov_trace_simple_reset():
    F = -np.eye(2)
    J = np.diag([1.0, 0.0])
    sysm = LinearHybridSystem(F, J, ("x", "theta"), {"x": slice(0, 1), "theta": slice(1, 2)})
    spec = SamplingSpec(0.1, 0.3, seed=2)
    arc = simulate(sysm, [1.0, 1.0], [], generate_sampling_sequence(spec, 3.3), 3.0, 0.01, spec)
    tr = lyapunov_trace(arc, np.eye(1), np.eye(1), 0.0)
    assert tr.max_jump_increase <= 0.0 and tr.intervals_decreasing
    assert tr.max_flow_increase < 0.0


def test_lyapunov_trace_preconditions(ref_loop):
    arc = simulate(ref_loop, np.zeros(9), [1.0, 0.0], times_for(1.0), 1.0, 0.01, SPEC)
    with pytest.raises(ValueError):
        lyapunov_trace(arc, -np.eye(8), np.eye(1), 1.0)
    with pytest.raises(DimensionError):
        lyapunov_trace(arc, np.eye(3), np.eye(1), 1.0)


def test_lyapunov_monotone_for_certified_loops(ref_loop, reference_analysis, plant, pre_result):
    ok, rows = lyapunov_monotonicity(ref_loop, reference_analysis["P1"], reference_analysis["P2"], 3.5,
                                     SPEC, n_arcs=20, seed=0)
    assert ok and len(rows) == 20
    loop = assemble_closed_loop_pre(plant, S_EX, pre_result.ext, pre_result.regulator)
    ok, _ = lyapunov_monotonicity(loop, pre_result.analysis["P1"], pre_result.analysis["P2"], 3.5,
                                  SPEC, n_arcs=20, seed=1)
    assert ok


def test_physical_arc_converts_to_error(ref_loop):
    x0 = np.r_[np.zeros(9), 1.0, 0.0]
    err = simulate(ref_loop, x0[:-2], x0[-2:], times_for(2.0), 2.0, 0.01, SPEC)
    phys = simulate(ref_loop, ref_loop.to_physical(x0)[:-2], x0[-2:], times_for(2.0), 2.0, 0.01, SPEC,
                    coordinates="physical")
    back = arc_to_error(phys, ref_loop)
    assert np.allclose(back.x, err.x, atol=1e-9)
    assert back.labels == err.labels


def test_observer_decay_vs_certified_rate(post_loop, post_result):
    a = post_result.assignment
    aug = post_loop.aug
    rep = check_assumption4(a["Pbar"], a["Phat"], 1.0, aug.frakA, post_loop.Q, post_loop.W, aug.H2, 0.3)
    assert rep.overall
    rng = np.random.default_rng(9)
    x0 = np.r_[np.zeros(post_loop.n), rng.standard_normal(post_loop.n + 1)]
    arc = simulate(post_loop, x0, [1.0, 0.0], times_for(30.0), 30.0, 0.01, SPEC)
    tr = lyapunov_trace(arc, a["Pbar"], a["Phat"], 1.0)
    assert tr.max_jump_increase <= 1e-10 * tr.scale and tr.intervals_decreasing
    err = np.hstack([arc.block("chit1"), arc.block("chit2")])
    fit = regulation_metrics(err, arc.t)
    # dW/dt <= -rho |chi~|^2 <= -(rho / omega2) W, so |chi~| decays at least at rho / (2 omega2)
    bound = rep.certified_rate / 2
    assert fit.fitted_decay_rate <= -0.9 * bound
    assert fit.normalized_final_error < 1e-2


def test_csv_round_trip(tmp_path, ref_loop):
    arc = simulate(ref_loop, np.zeros(9), [1.0, 0.0], times_for(1.0), 1.0, 0.01, SPEC)
    path = tmp_path / "arc.csv"
    write_arc_csv(arc, path)
    head = path.read_text(encoding="utf-8").splitlines()[0].split(",")
    assert head[:2] == ["t", "j"] and tuple(head[2:]) == arc.labels
    back = read_arc_csv(path)
    assert np.array_equal(back.t, arc.t) and np.array_equal(back.j, arc.j) and np.array_equal(back.x, arc.x)
    write_arc_csv(arc, tmp_path / "arc.tsv", delimiter="\t")
    assert np.array_equal(read_arc_csv(tmp_path / "arc.tsv", delimiter="\t").x, arc.x)
