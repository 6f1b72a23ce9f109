"""Regulator (Francis) equations, non-resonance tests and internal models."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionError, FrancisError, InternalModelError
from .model import as_matrix, check_neutral_stability, distinct_eigenvalues, pbh_margin

__all__ = [
    "FrancisSolution", "InternalModel", "check_nonresonance", "solve_francis",
    "build_internal_model", "solve_Z", "companion_block", "equilibrate",
]


def _rank_tol(s):
    return 1e-9 * (s[0] if len(s) else 0.0)


def equilibrate(M, sweeps=20):
    """Row and column scaling of ``M`` by powers of two towards unit max-norms.

    The scaling is exact in floating point and leaves the rank unchanged;
    it keeps a relative singular-value threshold meaningful for badly scaled
    matrices.
    """
    M = np.array(M, dtype=complex if np.iscomplexobj(M) else float)
    for _ in range(sweeps):
        r = np.abs(M).max(axis=1)
        r = np.exp2(np.round(np.log2(np.sqrt(np.where(r > 0, r, 1.0)))))
        M /= r[:, None]
        c = np.abs(M).max(axis=0)
        c = np.exp2(np.round(np.log2(np.sqrt(np.where(c > 0, c, 1.0)))))
        M /= c[None, :]
        if np.all(r == 1.0) and np.all(c == 1.0):
            break
    return M


def check_nonresonance(A, B, C, S):
    """Rank test of ``[[A - lam I, B], [C, 0]]`` for every ``lam`` in ``sigma(S)``.

    Returns ``(ok, margins)`` where ``margins`` maps each distinct eigenvalue
    of ``S`` to the ``(n+p)``-th singular value of the test matrix.  The rank
    decision is taken on the equilibrated matrix (see :func:`equilibrate`):
    ``ok`` holds iff there every ``(n+p)``-th singular value exceeds ``1e-9``
    times the largest one.
    """
    A, B, C, S = (as_matrix(M) for M in (A, B, C, S))
    n, p = A.shape[0], C.shape[0]
    if B.shape[0] != n or C.shape[1] != n:
        raise DimensionError("A, B, C have inconsistent shapes")
    ok = True
    margins = {}
    for lam, _ in distinct_eigenvalues(S):
        M = np.block([[A - lam * np.eye(n), B], [C, np.zeros((p, B.shape[1]))]])
        s = sla.svdvals(M)
        margins[lam] = float(s[n + p - 1]) if len(s) >= n + p else 0.0
        se = sla.svdvals(equilibrate(M))
        sigma = float(se[n + p - 1]) if len(se) >= n + p else 0.0
        if not sigma > _rank_tol(se):
            ok = False
    return ok, margins


@dataclass(frozen=True)
class FrancisSolution:
    """Solution ``(X, R)`` of ``X S = A X + B R + E``, ``C X = F``.

    The residual norms are recomputed from the stored data on each access.
    """

    X: np.ndarray
    R: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    F: np.ndarray
    S: np.ndarray
    unique: bool = True

    @property
    def residual_norms(self):
        r1 = np.linalg.norm(self.X @ self.S - self.A @ self.X - self.B @ self.R - self.E)
        r2 = np.linalg.norm(self.C @ self.X - self.F)
        return float(r1), float(r2)


def _francis_system(A, B, C, S, G=None):
    n, m, p, q = A.shape[0], B.shape[1], C.shape[0], S.shape[0]
    In, Iq = np.eye(n), np.eye(q)
    top = np.hstack([np.kron(S.T, In) - np.kron(Iq, A), -np.kron(Iq, B)])
    mid = np.hstack([np.kron(Iq, C), np.zeros((p * q, m * q))])
    rows = [top, mid]
    if G is not None:
        # internal-model steady state: R S = G R
        rows.append(np.hstack([np.zeros((m * q, n * q)),
                               np.kron(S.T, np.eye(m)) - np.kron(Iq, G)]))
    return np.vstack(rows)


def solve_francis(A, B, C, E, F, S, internal_model=None) -> FrancisSolution:
    """Solve the regulator equations by a dense Kronecker (vec) formulation.

    Unknowns are stacked as ``[vec(X); vec(R)]`` (column-major).  A square
    nonsingular system is solved by LU; anything else goes through least
    squares and the result is flagged ``unique=False`` when the system is
    rank deficient.

    If ``internal_model`` (a square ``G``) is given, ``R`` is additionally
    constrained by ``R S = G R``; this is the joint system solved for the
    post-processing architecture, where ``R`` plays the role of the internal
    model steady state.

    Raises
    ------
    FrancisError
        If the least-squares residual exceeds ``1e-9 * (1 + ||inputs||)``.
    """
    A, B, C, E, F, S = (as_matrix(M, name) for M, name in
                        ((A, "A"), (B, "B"), (C, "C"), (E, "E"), (F, "F"), (S, "S")))
    n, m, p, q = A.shape[0], B.shape[1], C.shape[0], S.shape[0]
    if (A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n
            or E.shape != (n, q) or F.shape != (p, q)):
        raise DimensionError("inconsistent shapes in regulator equations")
    G = None if internal_model is None else as_matrix(internal_model, "G")
    if G is not None and G.shape != (m, m):
        raise DimensionError(f"internal model must be {(m, m)}")

    M = _francis_system(A, B, C, S, G)
    rhs = np.concatenate([E.ravel(order="F"), F.ravel(order="F")]
                         + ([np.zeros(m * q)] if G is not None else []))
    unique = True
    if M.shape[0] == M.shape[1]:
        try:
            with warnings.catch_warnings():
                # exact singularity is detected from the pivots just below
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(M, check_finite=False)
            if np.min(np.abs(np.diag(lu[0]))) <= 1e-13 * np.max(np.abs(M)):
                raise np.linalg.LinAlgError
            sol = sla.lu_solve(lu, rhs)
        except (np.linalg.LinAlgError, ValueError):
            sol, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
            unique = rank == M.shape[1]
    else:
        sol, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
        unique = rank == M.shape[1]

    X = sol[: n * q].reshape((n, q), order="F")
    R = sol[n * q:].reshape((m, q), order="F")
    res = FrancisSolution(X, R, A, B, C, E, F, S, unique=bool(unique))
    scale = 1.0 + sum(np.linalg.norm(Z) for Z in (A, B, C, E, F, S))
    r = sum(res.residual_norms)
    if G is not None:
        r += np.linalg.norm(R @ S - G @ R)
    if r > 1e-9 * scale:
        raise FrancisError(f"regulator equations inconsistent (residual {r:.3e})", residual=r)
    return res


@dataclass(frozen=True)
class InternalModel:
    G1: np.ndarray
    G2: np.ndarray
    copies: int
    block_dims: tuple

    @property
    def n_z(self):
        return self.G1.shape[0]

    def blocks(self):
        """Yield the ``(beta_i, gamma_i)`` pairs."""
        start = 0
        for i, d in enumerate(self.block_dims):
            yield (self.G1[start:start + d, start:start + d],
                   self.G2[start:start + d, i:i + 1])
            start += d


def companion_block(coeffs):
    """Companion matrix whose last row is ``-coeffs`` (monic, low order first)."""
    d = len(coeffs)
    M = np.zeros((d, d))
    M[:-1, 1:] = np.eye(d - 1)
    M[-1, :] = -np.asarray(coeffs, dtype=float)
    return M


def build_internal_model(S, p: int) -> InternalModel:
    """``p`` copies of a companion realization of the minimal polynomial of ``S``.

    Each copy is ``beta = companion(min poly)``, ``gamma = e_d`` (last unit
    vector); such pairs are always controllable.
    """
    S = as_matrix(S, "S")
    ok, _ = check_neutral_stability(S)
    if not ok:
        raise InternalModelError("S is not neutrally stable (or defective)")
    if p < 1:
        raise InternalModelError("need at least one copy")
    roots = [lam for lam, _ in distinct_eigenvalues(S)]
    poly = np.real_if_close(np.poly(roots), tol=1e6).real
    coeffs = poly[::-1][:-1]  # drop the leading 1, low order first
    beta = companion_block(coeffs)
    d = beta.shape[0]
    gamma = np.zeros((d, 1))
    gamma[-1, 0] = 1.0
    G1 = sla.block_diag(*([beta] * p))
    G2 = sla.block_diag(*([gamma] * p))
    for lam in roots:
        if not pbh_margin(beta, gamma, [lam]) > 1e-9:
            raise InternalModelError("internal model block is not controllable")
    return InternalModel(as_matrix(G1, "G1"), as_matrix(G2, "G2"), p, (d,) * p)


def solve_Z(S, G1, K, R, tol=1e-8):
    """Solve ``Z S = G1 Z``, ``K Z = R`` by least squares on the stacked system.

    Raises :class:`FrancisError` when either residual is at least ``tol``.
    """
    S, G1, K, R = (as_matrix(M, n) for M, n in ((S, "S"), (G1, "G1"), (K, "K"), (R, "R")))
    q, nz = S.shape[0], G1.shape[0]
    if K.shape[1] != nz or R.shape != (K.shape[0], q):
        raise DimensionError("inconsistent shapes for Z equations")
    Iq = np.eye(q)
    M = np.vstack([np.kron(Iq, G1) - np.kron(S.T, np.eye(nz)), np.kron(Iq, K)])
    rhs = np.concatenate([np.zeros(nz * q), R.ravel(order="F")])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    Z = sol.reshape((nz, q), order="F")
    r1 = np.linalg.norm(Z @ S - G1 @ Z)
    r2 = np.linalg.norm(K @ Z - R)
    if r1 >= tol or r2 >= tol:
        raise FrancisError(f"Z equations infeasible (residuals {r1:.3e}, {r2:.3e})",
                           residual=(r1, r2))
    return Z
