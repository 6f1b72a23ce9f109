import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from sampled_regulation.model import PlantModel, RegulatorPre, build_extended_plant_pre  # noqa: E402

GOLDEN = Path(__file__).resolve().parent / "golden"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

A_P = np.array([[-2.0, 1.0], [0.0, -0.8]])
B_P = np.array([[0.0], [1.0]])
E_P = np.array([[1.0, 0.0], [0.0, 0.0]])
C_P = np.array([[10.0, 0.0]])
F_P = np.array([[0.0, 20.0]])
S_EX = np.array([[0.0, 1.0], [-1.0, 0.0]])
G2_PRE = np.array([[0.0], [1.0]])
K_PRE = np.array([[1.0, 0.0]])

A_K = np.array([[-7, -3.28, -1.03, -1.18, 0.7], [0, -9.7, 12.1, 0, 0], [0, -12.1, -5.78, -4.19, 2.49],
                [0, 0, 0, -16.6, 6.8], [0, 0, 0, -6.8, -16.6]])
B_K = np.array([[-0.2], [-3], [1], [-2], [354.9]])
C_K = np.array([[52.73, -178.33, -56.3, -64.3, 38.2]])
D_K = np.zeros((1, 1))
G2_POST = np.array([[-5.0], [-4.0]])
K_POST = np.array([[0.025, 0.0]])


@pytest.fixture(scope="session")
def plant():
    return PlantModel(A_P, B_P, E_P, C_P, F_P)


@pytest.fixture(scope="session")
def S():
    return S_EX.copy()


@pytest.fixture(scope="session")
def ext(plant):
    return build_extended_plant_pre(plant, S_EX, G2_PRE, K_PRE)


@pytest.fixture(scope="session")
def reference_controller():
    return RegulatorPre(
        A_c=[[-2.05, 0.78, -0.084, -0.063], [-4.76, -3.27, -0.417, -0.055],
             [-7.799, -6.4, -4.47, 1.259], [40.98, 19.73, -2.48, -20.32]],
        B_c=[[0.003], [0.13], [0.2], [-1.08]],
        C_c=[[184.05, 103.39, 11.27, -78.5]],
        D_c=[[-4.827]],
        H=[[-2.135]],
        E=[[-2.13, 0.0014, 0.0171, -0.0003]])


@pytest.fixture(scope="session")
def post_stabilizer():
    return {"A_k": A_K, "B_k": B_K, "C_k": C_K, "D_k": D_K, "K": K_POST, "G1": S_EX, "G2": G2_POST}


@pytest.fixture(scope="session")
def pre_result(plant):
    from sampled_regulation.model import SamplingSpec
    from sampled_regulation.synthesis import synthesize_pre
    return synthesize_pre(plant, S_EX, SamplingSpec(0.1, 0.3, seed=7), alpha=4.35, delta=3.5, K=K_PRE)


@pytest.fixture(scope="session")
def post_result(plant, post_stabilizer):
    from sampled_regulation.synthesis import synthesize_post
    st = post_stabilizer
    return synthesize_post(plant, S_EX, st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["K"], st["G1"],
                           st["G2"], 0.3, delta=1.0, decay_rate=0.1)


@pytest.fixture(scope="session")
def reference_analysis(ext, reference_controller):
    from sampled_regulation.synthesis import certify_pre
    rep, P, route = certify_pre(ext, reference_controller, 0.3, 3.5)
    assert route == "analysis" and rep.overall
    return P


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(results):
        terminalreporter.write_line(results[tag])
