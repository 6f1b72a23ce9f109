import math

import numpy as np
import pytest

from sampled_regulation.exceptions import DimensionError, SamplingError
from sampled_regulation.model import (PlantModel, RegulatorPost, SamplingSpec, as_matrix,
                                      build_augmented_post, build_extended_plant_pre,
                                      check_neutral_stability, check_sampling_sequence,
                                      generate_sampling_sequence, validate_plant)


def test_as_matrix_is_read_only_and_2d():
    M = as_matrix([1.0, 2.0])
    assert M.shape == (1, 2)
    with pytest.raises(ValueError):
        M[0, 0] = 3.0


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix([[np.nan]])


def test_plant_dimension_mismatch():
    with pytest.raises(DimensionError):
        PlantModel(np.eye(2), np.ones((3, 1)), np.zeros((2, 1)), np.ones((1, 2)), np.zeros((1, 1)))
    with pytest.raises(DimensionError):
        PlantModel(np.eye(2), np.ones((2, 1)), np.zeros((2, 1)), np.ones((1, 2)), np.zeros((1, 2)))


def test_plant_dims(plant):
    assert (plant.n_p, plant.m_p, plant.p, plant.q) == (2, 1, 1, 2)


def test_validate_reference_plant(plant):
    rep = validate_plant(plant)
    assert rep.stabilizable and rep.detectable


def test_validate_uncontrollable_marginal_mode():
    rep = validate_plant(PlantModel([[0.0]], [[0.0]], [[0.0]], [[1.0]], [[0.0]]))
    assert not rep.stabilizable
    assert rep.stabilizability_margin == 0.0


def test_validate_hurwitz_plant_trivially_ok():
    rep = validate_plant(PlantModel([[-1.0]], [[0.0]], [[0.0]], [[0.0]], [[0.0]]))
    assert rep.stabilizable and rep.detectable
    assert math.isinf(rep.stabilizability_margin)


def test_neutral_stability_examples(S):
    ok, spec = check_neutral_stability(S)
    assert ok
    assert np.allclose(sorted(spec.imag), [-1.0, 1.0]) and np.allclose(spec.real, 0.0)
    assert check_neutral_stability([[0.0]])[0]
    assert not check_neutral_stability([[0.0, 1.0], [0.0, 0.0]])[0]
    assert not check_neutral_stability([[-0.1]])[0]


def test_neutral_stability_repeated_semisimple():
    assert check_neutral_stability(np.zeros((2, 2)))[0]
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert check_neutral_stability(np.kron(np.eye(2), rot))[0]


def test_sampling_spec_invariants():
    with pytest.raises(SamplingError):
        SamplingSpec(0.3, 0.1)
    with pytest.raises(SamplingError):
        SamplingSpec(0.0, 0.1)
    with pytest.raises(SamplingError):
        SamplingSpec(0.1, 0.3, mode="bursty")
    with pytest.raises(SamplingError):
        SamplingSpec(0.1, 0.3, mode="explicit-list")


def test_periodic_forced():
    times = generate_sampling_sequence(SamplingSpec(0.1, 0.1, mode="periodic"), 0.35)
    assert np.allclose(times, [0.1, 0.2, 0.3], rtol=0, atol=1e-15)
    # 0.1 is not a float difference of instants near 0.3; equal bounds need ulp slack
    check_sampling_sequence(times, 0.1, 0.1, ulps=4)


def test_uniform_random_gaps():
    spec = SamplingSpec(0.1, 0.3, mode="uniform-random", seed=7)
    times = generate_sampling_sequence(spec, 10.0)
    check_sampling_sequence(times, 0.1, 0.3)
    gaps = np.diff(np.r_[0.0, times])
    assert gaps.min() >= 0.1 and gaps.max() <= 0.3
    assert times[-1] + 0.3 > 10.0
    assert np.array_equal(times, generate_sampling_sequence(spec, 10.0))


def test_worst_case_max_gaps():
    times = generate_sampling_sequence(SamplingSpec(0.1, 0.3, mode="worst-case-max"), 3.0)
    gaps = np.diff(np.r_[0.0, times])
    assert np.all(gaps == 0.3) or np.allclose(gaps, 0.3, rtol=0, atol=4e-16)
    check_sampling_sequence(times, 0.1, 0.3)


def test_explicit_list_rejects_bad_gap_with_index():
    with pytest.raises(SamplingError) as exc:
        SamplingSpec(0.1, 0.3, mode="explicit-list", explicit_times=(0.2, 0.35, 0.4))
    assert exc.value.index == 2


def test_explicit_list_first_instant_bound():
    with pytest.raises(SamplingError) as exc:
        check_sampling_sequence([0.5], 0.1, 0.3)
    assert exc.value.index == 0


def test_extended_plant_structure(ext):
    assert ext.A.shape == (4, 4) and ext.B.shape == (4, 1) and ext.C.shape == (1, 4)
    assert np.all(ext.A[2:, :2] == 0) and np.all(ext.B[:2] == 0) and np.all(ext.C[:, 2:] == 0)
    assert np.all(ext.C @ ext.B == 0)
    assert (ext.n, ext.n_z, ext.p, ext.n_v) == (4, 2, 1, 1)


def test_extended_plant_dimension_errors(plant, S):
    with pytest.raises(DimensionError):
        build_extended_plant_pre(plant, S, [[0.0], [1.0]], [[1.0, 0.0, 0.0]])


def test_regulator_post_observer_blocks(plant, post_stabilizer):
    st = post_stabilizer
    Q = np.arange(9.0).reshape(9, 1)
    reg = RegulatorPost(st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["G1"], st["G2"], st["K"], Q, [[2.0]])
    obs = reg.observer(plant)
    aug = build_augmented_post(plant, st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["K"], st["G1"], st["G2"])
    assert np.array_equal(obs["T"][:9, :9], aug.frakAc)
    assert np.array_equal(obs["T"][:9, 9:], Q)
    assert obs["T"][9, 9] == 2.0
    assert np.array_equal(obs["L1"][9:, :9], -aug.H2)
    assert np.array_equal(obs["H"], np.hstack([aug.H2, [[0.0]]]))
    with pytest.raises(DimensionError):
        RegulatorPost(st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["G1"], st["G2"], st["K"],
                      Q[:5], [[2.0]]).observer(plant)
