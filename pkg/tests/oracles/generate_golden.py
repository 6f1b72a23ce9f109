"""Regenerate the frozen oracle data under tests/golden and tests/fixtures.

Run from the repository root: ``python3 tests/oracles/generate_golden.py``.
The files are committed; tests only read them.
"""
import json
import math
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from oracles.eig2 import eig2_symmetric  # noqa: E402
from oracles.francis_bruteforce import francis_oracle  # noqa: E402

GOLDEN = HERE.parent / "golden"
FIXTURES = HERE.parent / "fixtures"

A_p = [[-2.0, 1.0], [0.0, -0.8]]
B_p = [[0.0], [1.0]]
E_p = [[1.0, 0.0], [0.0, 0.0]]
C_p = [[10.0, 0.0]]
F_p = [[0.0, 20.0]]
S = [[0.0, 1.0], [-1.0, 0.0]]


def dump(path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def francis_reference():
    X, R = francis_oracle(A_p, B_p, C_p, E_p, F_p, S)
    dump(GOLDEN / "francis_reference.json", {"X_p": X.tolist(), "R": R.tolist()})


def scalar_post_smoke():
    # frakA = -1, H2 = 1, Pbar = Phat = 1, Jbar = Jhat = 0, delta = 1, T2 = 0.1
    out = {}
    for name, tau in (("M(0)", 0.0), ("M(T2)", 0.1)):
        s = math.exp(tau)
        a, b, c = -2.0, s, -s
        out[name] = {"matrix": [[a, b], [b, c]], "eigenvalues": list(eig2_symmetric(a, b, c))}
    dump(GOLDEN / "post_scalar_smoke.json", out)


def solver_runs():
    from sampled_regulation.model import PlantModel, build_extended_plant_pre
    from sampled_regulation.synthesis import feasible_pre, grid_search_hyperparams

    plant = PlantModel(A_p, B_p, E_p, C_p, F_p)
    ext = build_extended_plant_pre(plant, S, [[0.0], [1.0]], [[1.0, 0.0]])
    lo, hi = 0.3, 10.0
    for _ in range(14):
        mid = 0.5 * (lo + hi)
        if feasible_pre(ext, mid, 4.35, 3.5)[0]:
            lo = mid
        else:
            hi = mid
    dump(GOLDEN / "pre_feasibility_frontier.json",
         {"alpha": 4.35, "delta": 3.5, "K": [[1.0, 0.0]], "feasible_T2": lo, "infeasible_T2": hi,
          "T2_1e3_feasible": bool(feasible_pre(ext, 1e3, 4.35, 3.5)[0])})
    alphas, deltas = [4.0, 4.35, 4.7], [3.0, 3.5, 4.0]
    cells = grid_search_hyperparams(plant, S, 0.3, alphas, deltas, K=[[1.0, 0.0]])
    dump(GOLDEN / "grid_reference.json",
         {"alphas": alphas, "deltas": deltas,
          "cells": [{"alpha": c.alpha, "delta": c.delta, "feasible": c.status == "feasible"}
                    for c in cells]})


def smoke_fixture():
    """Scalar plant with unit data, its synthesized regulator and the golden verify report."""
    from sampled_regulation import cli

    cfg = (FIXTURES / "smoke.yaml")
    out = FIXTURES / "smoke_run"
    assert cli.main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 0
    (FIXTURES / "smoke_regulator.json").write_text((out / "regulator.json").read_text())
    assert cli.main(["verify", "--config", str(cfg), "--regulator", str(FIXTURES / "smoke_regulator.json"),
                     "--out", str(out)]) == 0
    rep = json.loads((out / "verify.json").read_text())
    rep.pop("timestamp")
    dump(GOLDEN / "smoke_verify.json", rep)
    for f in out.iterdir():
        f.unlink()
    out.rmdir()


if __name__ == "__main__":
    francis_reference()
    scalar_post_smoke()
    solver_runs()
    smoke_fixture()
