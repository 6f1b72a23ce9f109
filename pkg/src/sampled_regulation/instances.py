"""Random problem instances for property tests and the reproduction runs."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .francis import build_internal_model
from .model import PlantModel, build_augmented_post
from .synthesis import lqr_gain
from .verify import check_hurwitz

__all__ = ["random_exosystem", "random_plant", "random_post_instance"]


def random_exosystem(rng, q=2):
    """Block-diagonal ``S`` with one rotation block per pair and a zero if ``q`` is odd."""
    blocks = [np.array([[0.0, w], [-w, 0.0]]) for w in rng.uniform(0.3, 3.0, size=q // 2)]
    if q % 2:
        blocks.append(np.zeros((1, 1)))
    return sla.block_diag(*blocks)


def random_plant(rng, n_p=2, q=2, p=1):
    """Gaussian single-input plant with ``p`` outputs (``m_p = p``)."""
    return PlantModel(rng.standard_normal((n_p, n_p)), rng.standard_normal((n_p, p)),
                      rng.standard_normal((n_p, q)), rng.standard_normal((p, n_p)),
                      rng.standard_normal((p, q)))


def random_post_instance(rng, n_p=None, q=2, max_tries=50, gain_bound=1e3):
    """Plant, exosystem and continuous stabilizer with ``frakAc`` Hurwitz.

    The stabilizer is an observer-based LQR design for the plant driven by
    the internal model through ``v = K z``; by the separation principle the
    resulting ``frakAc`` is Hurwitz whenever both Riccati designs succeed,
    which is re-checked.  Draws whose stabilizer has an entry larger than
    ``gain_bound`` are rejected: they come from nearly uncontrollable or
    unobservable plants and give closed loops too ill-conditioned for a
    numerical rank test at relative tolerance 1e-9.

    Returns
    -------
    dict
        ``plant``, ``S``, ``A_k``, ``B_k``, ``C_k``, ``D_k``, ``K``, ``G1``, ``G2``.
    """
    for _ in range(max_tries):
        n = int(n_p if n_p is not None else rng.integers(1, 4))
        plant = random_plant(rng, n, q, 1)
        S = random_exosystem(rng, q)
        im = build_internal_model(S, 1)
        G1, G2 = im.G1, im.G2 * rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
        n_z = G1.shape[0]
        K = rng.standard_normal((1, n_z))
        A = np.block([[plant.A_p, np.zeros((n, n_z))], [G2 @ plant.C_p, G1]])
        B = np.vstack([plant.B_p, np.zeros((n_z, 1))])
        C = np.hstack([np.zeros((1, n)), K])
        try:
            L = lqr_gain(A, B)
            F = lqr_gain(A.T, C.T).T
        except Exception:
            continue
        A_k, B_k, C_k, D_k = A - B @ L - F @ C, F, -L, np.zeros((1, 1))
        if max(np.abs(A_k).max(), np.abs(B_k).max(), np.abs(C_k).max()) > gain_bound:
            continue
        aug = build_augmented_post(plant, A_k, B_k, C_k, D_k, K, G1, G2)
        if check_hurwitz(aug.frakAc)[0]:
            return {"plant": plant, "S": S, "A_k": A_k, "B_k": B_k, "C_k": C_k, "D_k": D_k,
                    "K": K, "G1": G1, "G2": G2}
    raise RuntimeError("could not draw a stabilizable instance")
