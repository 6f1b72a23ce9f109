"""Design pipelines for both architectures: assemble, solve, recover, certify."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .certificate import CertificateReport
from .exceptions import (IllConditionedError, LmiInfeasibleError, NotHurwitzError,
                         SynthesisError)
from .francis import build_internal_model, check_nonresonance
from .hybridsim import closed_loop_matrices_pre
from .lmi import (LmiAssignment, assemble_analysis_lmis, assemble_observer_analysis_lmis,
                  assemble_post_lmis, assemble_pre_lmis, solve_feasibility, verify_assignment)
from .model import (ExtendedPlantPre, PlantModel, RegulatorPost, RegulatorPre, SamplingSpec,
                    as_matrix, build_augmented_post, build_extended_plant_pre, validate_plant)
from .verify import check_assumption4, check_hurwitz, check_property1

__all__ = [
    "PreSynthesisResult", "PostSynthesisResult", "GridCell",
    "recover_controller_pre", "forward_change_of_variables", "recover_observer_post",
    "lqr_gain", "default_internal_model_gain", "synthesize_pre", "synthesize_post",
    "certify_pre", "certify_post", "analysis_resolve", "grid_search_hyperparams", "feasible_pre",
]


# ---------------------------------------------------------------------------
# change of variables
# ---------------------------------------------------------------------------

def _min_sv(M):
    return float(sla.svdvals(M)[-1])


def forward_change_of_variables(reg: RegulatorPre, X, Y, U, V, ext: ExtendedPlantPre):
    """``(K1, K2, K3, K4)`` for a given controller and Lyapunov factors.

    ``K1 = D_c C Y + C_c V^T``, ``K2 = D_c``,
    ``K3 = X A Y + X B (D_c C Y + C_c V^T) + U (B_c C Y + A_c V^T)``,
    ``K4 = X B D_c + U B_c``.
    """
    A, B, C = ext.A, ext.B, ext.C
    K1 = reg.D_c @ C @ Y + reg.C_c @ V.T
    K2 = reg.D_c.copy()
    K3 = X @ A @ Y + X @ B @ K1 + U @ (reg.B_c @ C @ Y + reg.A_c @ V.T)
    K4 = X @ B @ reg.D_c + U @ reg.B_c
    return K1, K2, K3, K4


def recover_controller_pre(values, ext: ExtendedPlantPre, rel_tol=1e-10):
    """Undo the linearizing change of variables.

    ``U = (I - X Y) V^{-T}`` and::

        [[A_c, B_c], [C_c, D_c]] = [[U^{-1}, -U^{-1} X B], [0, I]]
                                   [[K3 - X A Y, K4], [K1, K2]]
                                   [[V^{-T}, 0], [-C Y V^{-T}, I]]

    ``H = P2^{-1} Z1`` and ``E = P2^{-1} Z2``.

    Returns
    -------
    (RegulatorPre, U)

    Raises
    ------
    IllConditionedError
        If the smallest singular value of ``V``, ``U`` or ``P2`` is below
        ``rel_tol`` times its norm.
    """
    X, Y, V = (np.asarray(values[k], dtype=float) for k in ("X", "Y", "V"))
    K1, K2, K3, K4 = (np.asarray(values[k], dtype=float) for k in ("K1", "K2", "K3", "K4"))
    A, B, C = ext.A, ext.B, ext.C
    n = A.shape[0]
    for M, nm in ((V, "V"),):
        if _min_sv(M) < rel_tol * max(1.0, np.linalg.norm(M, 2)):
            raise IllConditionedError(f"{nm} is numerically singular")
    VinvT = np.linalg.inv(V).T
    U = (np.eye(n) - X @ Y) @ VinvT
    if _min_sv(U) < rel_tol * max(1.0, np.linalg.norm(U, 2)):
        raise IllConditionedError("U is numerically singular")
    Uinv = np.linalg.inv(U)
    nv, p = K2.shape
    left = np.block([[Uinv, -Uinv @ X @ B], [np.zeros((nv, n)), np.eye(nv)]])
    mid = np.block([[K3 - X @ A @ Y, K4], [K1, K2]])
    right = np.block([[VinvT, np.zeros((n, p))], [-C @ Y @ VinvT, np.eye(p)]])
    DK = left @ mid @ right
    P2 = np.asarray(values["P2"], dtype=float)
    if _min_sv(P2) < rel_tol * max(1.0, np.linalg.norm(P2, 2)):
        raise IllConditionedError("P2 is numerically singular")
    H = np.linalg.solve(P2, np.asarray(values["Z1"], dtype=float))
    E = np.linalg.solve(P2, np.asarray(values["Z2"], dtype=float))
    reg = RegulatorPre(DK[:n, :n], DK[:n, n:], DK[n:, :n], DK[n:, n:], H, E)
    return reg, U


def recover_observer_post(values, H2):
    """``Q = Pbar^{-1} Jbar`` and ``W = Phat^{-1} Jhat - H2 Q``."""
    Pbar, Phat = np.asarray(values["Pbar"], float), np.asarray(values["Phat"], float)
    for M, nm in ((Pbar, "Pbar"), (Phat, "Phat")):
        if _min_sv(M) < 1e-12 * max(1.0, np.linalg.norm(M, 2)):
            raise IllConditionedError(f"{nm} is singular")
    Q = np.linalg.solve(Pbar, np.asarray(values["Jbar"], float))
    W = np.linalg.solve(Phat, np.asarray(values["Jhat"], float)) - np.asarray(H2, float) @ Q
    return Q, W


def lyapunov_from_design(values, n):
    """Analysis matrices implied by a design assignment.

    ``P1 = Psi^{-T} [[Y, I], [I, X]] Psi^{-1}`` with ``Psi = [[Y, I], [V^T, 0]]``
    and ``P4 = P8^{-1}``.
    """
    X, Y, V = values["X"], values["Y"], values["V"]
    I = np.eye(n)
    Psi = np.block([[Y, I], [V.T, np.zeros((n, n))]])
    Psi_inv = np.linalg.inv(Psi)
    P1 = Psi_inv.T @ np.block([[Y, I], [I, X]]) @ Psi_inv
    P4 = np.linalg.inv(values["P8"])
    sym = lambda M: 0.5 * (M + M.T)  # noqa: E731
    return {"P1": sym(P1), "P2": sym(values["P2"]), "P3": sym(values["P3"]),
            "P4": sym(P4), "P5": sym(values["P5"]), "P6": sym(values["P6"])}


# ---------------------------------------------------------------------------
# default internal-model gain
# ---------------------------------------------------------------------------

def lqr_gain(A, B, Qw=None, Rw=None):
    """Infinite-horizon LQR gain ``L = R^{-1} B^T P`` (``u = -L x``).

    ``P`` comes from the stable invariant subspace of the Hamiltonian matrix,
    computed with an ordered real Schur form.
    """
    A, B = as_matrix(A, "A"), as_matrix(B, "B")
    n, m = A.shape[0], B.shape[1]
    Qw = np.eye(n) if Qw is None else as_matrix(Qw, "Q")
    Rw = np.eye(m) if Rw is None else as_matrix(Rw, "R")
    G = B @ np.linalg.solve(Rw, B.T)
    Ham = np.block([[A, -G], [-Qw, -A.T]])
    T, Zs, sdim = sla.schur(Ham, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError("Hamiltonian has eigenvalues on the imaginary axis")
    U1, U2 = Zs[:n, :n], Zs[n:, :n]
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    return np.linalg.solve(Rw, B.T @ P)


def default_internal_model_gain(plant: PlantModel, G1, G2):
    """Gain ``K`` from an LQR design for plant plus internal model.

    The augmented pair is ``([[A_p, 0], [G2 C_p, G1]], [B_p; 0])``; with
    ``u = -[L_x, L_z] col(x_p, z)`` the internal-model part gives
    ``K = -L_z``.
    """
    G1, G2 = as_matrix(G1, "G1"), as_matrix(G2, "G2")
    n_p, n_z = plant.n_p, G1.shape[0]
    A = np.block([[plant.A_p, np.zeros((n_p, n_z))], [G2 @ plant.C_p, G1]])
    B = np.vstack([plant.B_p, np.zeros((n_z, plant.m_p))])
    L = lqr_gain(A, B)
    return -L[:, n_p:]


# ---------------------------------------------------------------------------
# pre-processing pipeline
# ---------------------------------------------------------------------------

@dataclass
class PreSynthesisResult:
    regulator: RegulatorPre
    assignment: LmiAssignment
    U: np.ndarray
    hyperparams: Dict[str, float]
    certificate: CertificateReport
    ext: ExtendedPlantPre
    analysis: Dict[str, np.ndarray]
    route: str

    @property
    def factorization_residual(self):
        X, Y, V = self.assignment["X"], self.assignment["Y"], self.assignment["V"]
        return float(np.linalg.norm(X @ Y + self.U @ V.T - np.eye(X.shape[0])))


def analysis_resolve(ext: ExtendedPlantPre, reg: RegulatorPre, T2, delta, tol=1e-7, solver="auto"):
    """Solve the stability inequalities with the controller fixed.

    Returns the analysis matrices ``P1 ... P6``; raises
    :class:`LmiInfeasibleError` if none are found.
    """
    Abb, Bbb, Jbb, H = closed_loop_matrices_pre(ext, reg)
    problem = assemble_analysis_lmis(Abb, Bbb, Jbb, H, T2, delta)
    a = solve_feasibility(problem, tol=tol, solver=solver)
    return {k: np.array(v) for k, v in a.values.items()}


def certify_pre(ext: ExtendedPlantPre, reg: RegulatorPre, T2, delta, P=None, tol=1e-7, solver="auto"):
    """Certify the sufficient stability conditions for a fixed controller.

    ``P`` (analysis matrices) is tried first when given; otherwise, or if it
    fails, the analysis inequalities are re-solved with the controller fixed.

    Returns
    -------
    (report, P, route)
        ``route`` is ``"design"`` or ``"analysis"``.
    """
    if P is not None:
        rep = check_property1(P, ext, reg, T2, delta)
        if rep.overall and rep.k1 > 0 and rep.k2 > 0:
            return rep, P, "design"
    try:
        P2 = analysis_resolve(ext, reg, T2, delta, tol=tol, solver=solver)
    except LmiInfeasibleError as exc:
        rep = check_property1(P, ext, reg, T2, delta) if P is not None else None
        if rep is None:
            rep = CertificateReport()
            rep.add("analysis_resolve", False, exc.worst_margin if exc.worst_margin is not None else math.inf,
                    tol, exc.reason)
        return rep, P, "failed"
    rep = check_property1(P2, ext, reg, T2, delta)
    return rep, P2, "analysis"


def _check_assumptions(plant, S):
    rep = validate_plant(plant)
    if not rep.ok:
        raise SynthesisError(f"plant fails stabilizability/detectability: {rep}")
    ok, margins = check_nonresonance(plant.A_p, plant.B_p, plant.C_p, S)
    if not ok:
        raise SynthesisError(f"plant is resonant with the exosystem: {margins}")


def synthesize_pre(plant: PlantModel, S, spec: SamplingSpec, copies=None, alpha=4.35, delta=3.5,
                   K=None, m1_form="relaxed", tol=1e-7, solver="auto") -> PreSynthesisResult:
    """Hybrid stabilizer and holding device for the pre-processing architecture.

    Pipeline: internal model, gain ``K`` (LQR default), design inequalities at
    ``T2 = spec.T2``, solve, recover the controller, then certify the
    sufficient stability conditions on the recovered closed loop.  The
    certificate first uses the analysis matrices implied by the design
    variables; if those miss, it re-solves the analysis inequalities with the
    controller fixed.  The route taken is stored on the result.

    Raises
    ------
    SynthesisError
        On infeasible inequalities (carrying the worst margin and the
        hyperparameters) or if the recovered loop cannot be certified.
    """
    S = as_matrix(S, "S")
    _check_assumptions(plant, S)
    p = plant.p if copies is None else int(copies)
    im = build_internal_model(S, p)
    if K is None:
        K = default_internal_model_gain(plant, im.G1, im.G2)
    ext = build_extended_plant_pre(plant, im.G1, im.G2, K)
    hyper = {"T2": spec.T2, "alpha": float(alpha), "delta": float(delta)}
    try:
        problem = assemble_pre_lmis(ext, spec.T2, alpha, delta, m1_form=m1_form)
        assignment = solve_feasibility(problem, tol=tol, solver=solver)
    except LmiInfeasibleError as exc:
        raise SynthesisError(f"design inequalities infeasible ({exc.reason}, worst constraint "
                             f"{exc.worst_constraint})", worst_margin=exc.worst_margin,
                             hyperparams=hyper) from exc
    try:
        reg, U = recover_controller_pre(assignment.values, ext)
    except IllConditionedError as exc:
        raise SynthesisError(str(exc), hyperparams=hyper) from exc

    cert = CertificateReport()
    cert.extend(verify_assignment(problem, assignment), prefix="design:")
    X, Y, V = assignment["X"], assignment["Y"], assignment["V"]
    r_fac = float(np.linalg.norm(X @ Y + U @ V.T - np.eye(ext.n)))
    t_fac = 1e-9 * (1 + np.linalg.norm(X) * np.linalg.norm(Y))
    cert.add("factorization", r_fac < t_fac, r_fac, t_fac)
    try:
        P = lyapunov_from_design(assignment.values, ext.n)
    except np.linalg.LinAlgError:
        P = None
    rep, P, route = certify_pre(ext, reg, spec.T2, delta, P=P, tol=tol, solver=solver)
    cert.extend(rep, prefix=f"stability[{route}]:")
    Abb = closed_loop_matrices_pre(ext, reg)[0]
    ok, absc = check_hurwitz(Abb)
    cert.add("hurwitz(Abb)", ok, absc, 1e-9)
    if not cert.overall:
        bad = cert.failed()
        raise SynthesisError(f"recovered controller not certified: {[c.name for c in bad]}",
                             worst_margin=max(c.margin for c in bad), hyperparams=hyper)
    return PreSynthesisResult(reg, assignment, U, hyper, cert, ext, P, route)


# ---------------------------------------------------------------------------
# post-processing pipeline
# ---------------------------------------------------------------------------

@dataclass
class PostSynthesisResult:
    regulator: RegulatorPost
    assignment: LmiAssignment
    hyperparams: Dict[str, float]
    hurwitz_margin: float
    certificate: CertificateReport


def synthesize_post(plant: PlantModel, S, A_k, B_k, C_k, D_k, K, G1, G2, T2, delta=1.0,
                    decay_rate=0.0, tol=1e-7, solver="auto") -> PostSynthesisResult:
    """Hybrid observer gains ``(Q, W)`` for a given continuous stabilizer.

    ``decay_rate`` tightens the observer inequalities (see
    :func:`~sampled_regulation.lmi.assemble_post_lmis`); the certificate always
    checks the untightened conditions.

    Raises
    ------
    NotHurwitzError
        If ``frakAc`` is not Hurwitz; names the offending eigenvalue.
    SynthesisError
        If the observer inequalities are infeasible or the result fails
        certification.
    """
    S = as_matrix(S, "S")
    aug = build_augmented_post(plant, A_k, B_k, C_k, D_k, K, G1, G2)
    ok, absc = check_hurwitz(aug.frakAc)
    if not ok:
        ev = np.linalg.eigvals(aug.frakAc)
        worst = ev[np.argmax(ev.real)]
        raise NotHurwitzError(f"frakAc is not Hurwitz: eigenvalue {worst:.6g}", eigenvalue=complex(worst))
    hyper = {"T2": float(T2), "delta": float(delta), "decay_rate": float(decay_rate)}
    try:
        problem = assemble_post_lmis(aug.frakA, aug.H2, T2, delta, decay_rate)
        assignment = solve_feasibility(problem, tol=tol, solver=solver)
    except LmiInfeasibleError as exc:
        raise SynthesisError(f"observer inequalities infeasible ({exc.reason})",
                             worst_margin=exc.worst_margin, hyperparams=hyper) from exc
    Q, W = recover_observer_post(assignment.values, aug.H2)
    reg = RegulatorPost(A_k, B_k, C_k, D_k, G1, G2, K, Q, W)
    cert = CertificateReport()
    cert.add("hurwitz(frakAc)", ok, absc, 1e-9)
    cert.extend(verify_assignment(problem, assignment), prefix="design:")
    a4 = check_assumption4(assignment["Pbar"], assignment["Phat"], delta, aug.frakA, Q, W, aug.H2, T2)
    cert.extend(a4, prefix="observer:")
    nr_ok, margins = check_nonresonance(aug.A_cl, aug.B_cl, aug.H1, S)
    cert.add("nonresonance(A_cl,B_cl,H1)", nr_ok, min(margins.values()), 0.0)
    if not cert.overall:
        bad = cert.failed()
        raise SynthesisError(f"observer not certified: {[c.name for c in bad]}",
                             worst_margin=max(c.margin for c in bad), hyperparams=hyper)
    return PostSynthesisResult(reg, assignment, hyper, absc, cert)


def certify_post(plant: PlantModel, S, reg: RegulatorPost, T2, delta, P=None, tol=1e-7,
                 solver="auto", resolve=True):
    """Certify a post-processing regulator with its gains fixed.

    ``P`` (a dict with ``Pbar`` and ``Phat``) is tried first when given;
    otherwise, or if it fails and ``resolve`` is true, the observer
    inequalities are re-solved for new Lyapunov matrices.

    Returns
    -------
    (report, P, route)
        ``route`` is ``"given"``, ``"analysis"`` or ``"failed"``.
    """
    S = as_matrix(S, "S")
    aug = reg.augmented(plant)
    reg.observer(plant)
    cert = CertificateReport()
    ok, absc = check_hurwitz(aug.frakAc)
    cert.add("hurwitz(frakAc)", ok, absc, 1e-9)
    nr_ok, margins = check_nonresonance(aug.A_cl, aug.B_cl, aug.H1, S)
    cert.add("nonresonance(A_cl,B_cl,H1)", nr_ok, min(margins.values()), 0.0)

    def observer_check(PP):
        try:
            return check_assumption4(PP["Pbar"], PP["Phat"], delta, aug.frakA, reg.Q, reg.W, aug.H2, T2)
        except ValueError:
            return None

    route = "given"
    a4 = observer_check(P) if P is not None else None
    if P is not None and not resolve:
        if a4 is None:
            cert.add("observer:positivity", False, math.inf, 0.0, "Pbar or Phat not positive definite")
            route = "failed"
    elif a4 is None or not a4.overall:
        problem = assemble_observer_analysis_lmis(aug.frakA, aug.H2, reg.Q, reg.W, T2, delta)
        try:
            sol = solve_feasibility(problem, tol=tol, solver=solver)
            P = {k: np.array(v) for k, v in sol.values.items()}
            a4, route = observer_check(P), "analysis"
        except LmiInfeasibleError as exc:
            route = "failed"
            if a4 is None:
                cert.add("observer_resolve", False,
                         exc.worst_margin if exc.worst_margin is not None else math.inf, tol, exc.reason)
    if a4 is not None:
        cert.extend(a4, prefix=f"observer[{route}]:")
    return cert, P, route


# ---------------------------------------------------------------------------
# hyperparameter sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridCell:
    alpha: float
    delta: float
    status: str  # "feasible", "infeasible" or "skipped"
    worst_margin: Optional[float] = None


def feasible_pre(ext: ExtendedPlantPre, T2, alpha, delta, tol=1e-7, solver="auto", m1_form="relaxed"):
    """Feasibility of the design inequalities alone: ``(ok, worst_margin)``."""
    try:
        solve_feasibility(assemble_pre_lmis(ext, T2, alpha, delta, m1_form=m1_form), tol=tol, solver=solver)
        return True, None
    except LmiInfeasibleError as exc:
        return False, exc.worst_margin


def grid_search_hyperparams(plant: PlantModel, S, T2, alphas: Sequence[float], deltas: Sequence[float],
                            K=None, copies=None, max_workers=1, **kw):
    """Feasibility of every ``(alpha, delta)`` cell, in row-major order.

    Cells violating ``alpha > 0`` or ``delta > 0`` are marked ``"skipped"``.
    With ``max_workers > 1`` cells are evaluated in threads; the output order
    is always the cell order.
    """
    S = as_matrix(S, "S")
    p = plant.p if copies is None else int(copies)
    im = build_internal_model(S, p)
    if K is None:
        K = default_internal_model_gain(plant, im.G1, im.G2)
    ext = build_extended_plant_pre(plant, im.G1, im.G2, K)
    cells = [(float(a), float(d)) for a in alphas for d in deltas]

    def run(cell):
        a, d = cell
        if not (a > 0 and d > 0 and math.isfinite(a) and math.isfinite(d)):
            return GridCell(a, d, "skipped")
        ok, wm = feasible_pre(ext, T2, a, d, **kw)
        return GridCell(a, d, "feasible" if ok else "infeasible", wm)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            return list(ex.map(run, cells))
    return [run(c) for c in cells]
