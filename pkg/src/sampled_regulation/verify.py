"""Numerical certificates: Hurwitz tests, matrix-inequality margins, observer
Lyapunov conditions and trajectory-level regulation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .certificate import Check, CertificateReport
from .hybridsim import closed_loop_matrices_pre, lyapunov_trace, simulate
from .lmi import He, assemble_analysis_lmis, verify_assignment
from .model import (ExtendedPlantPre, RegulatorPre, SamplingSpec, as_matrix,
                    generate_sampling_sequence)

__all__ = [
    "Check", "CertificateReport", "Property1Report", "Assumption4Report",
    "RegulationMetrics", "check_hurwitz", "check_property1", "check_assumption4",
    "observer_flow_matrix", "regulation_metrics", "varpi_diagnostic",
    "lyapunov_monotonicity", "TAIL_FRACTION", "FLOOR",
]

TAIL_FRACTION = 0.6
FLOOR = 1e-12


def check_hurwitz(A, tol=1e-9):
    """``(ok, abscissa)`` with ``ok`` iff the spectral abscissa is below ``-tol``."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    a = float(np.max(np.linalg.eigvals(A).real))
    return a < -tol, a


@dataclass
class Property1Report(CertificateReport):
    k1: float = float("nan")
    k2: float = float("nan")


def check_property1(P, ext: ExtendedPlantPre, reg: RegulatorPre, T2, delta, tol=None) -> Property1Report:
    """Margins of the sufficient matrix conditions for the pre-processing loop.

    Parameters
    ----------
    P : dict
        ``P1 ... P6`` by name.

    Returns
    -------
    Property1Report
        One check per inequality, and ``k1 = -lambda_max(P3 - P4)``,
        ``k2 = -lambda_max(P5 - P6)``.
    """
    Abb, Bbb, Jbb, H = closed_loop_matrices_pre(ext, reg)
    problem = assemble_analysis_lmis(Abb, Bbb, Jbb, H, T2, delta)
    values = {k: _symmetric(P[k], k) for k in ("P1", "P2", "P3", "P4", "P5", "P6")}
    base = verify_assignment(problem, values, tol=tol)
    rep = Property1Report(list(base.checks))
    rep.k1 = -float(np.linalg.eigvalsh(values["P3"] - values["P4"])[-1])
    rep.k2 = -float(np.linalg.eigvalsh(values["P5"] - values["P6"])[-1])
    return rep


def _symmetric(M, name):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, rtol=0, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


def observer_flow_matrix(Pbar, Phat, delta, frakA, Q, W, H2, tau):
    """Quadratic form of the derivative of the observer Lyapunov function.

    ``d/dt W = chi~^T M(tau) chi~`` along the error flow ``h`` with
    ``W = chi1~^T Pbar chi1~ + exp(delta tau) chi2~^T Phat chi2~``; computed
    directly from ``h`` (not from the design variables).
    """
    n, p = frakA.shape[0], H2.shape[0]
    h = np.block([[frakA - Q @ H2, -Q], [W @ H2 - H2 @ (frakA - Q @ H2), W + H2 @ Q]])
    s = math.exp(delta * tau)
    P = sla.block_diag(Pbar, s * Phat)
    M = He(P @ h)
    M[n:, n:] -= delta * s * Phat
    return 0.5 * (M + M.T)


@dataclass
class Assumption4Report(CertificateReport):
    omega1: float = float("nan")
    omega2: float = float("nan")
    rho: float = float("nan")

    @property
    def certified_rate(self):
        """Lower bound ``rho / omega2`` on the decay rate of the Lyapunov function."""
        return self.rho / self.omega2


def check_assumption4(Pbar, Phat, delta, frakA, Q, W, H2, T2, n_tau=101, tol=1e-9) -> Assumption4Report:
    """Certify the observer Lyapunov conditions for ``(Q, W)``.

    Checks the flow inequality at ``tau = 0`` and ``tau = T2`` (strict, beyond
    ``tol``), the sandwich constants ``omega1 = min(lambda_min(Pbar),
    lambda_min(Phat))`` and ``omega2 = max(lambda_max(Pbar), exp(delta T2)
    lambda_max(Phat))``, and the jump decrease ``-chi2~^T Phat chi2~ <= 0``.
    ``rho`` is minus the largest eigenvalue of ``M(tau)`` over ``n_tau``
    evenly spaced timer values.

    Raises
    ------
    ValueError
        If ``Pbar`` or ``Phat`` is not positive definite.
    """
    Pbar, Phat = _symmetric(Pbar, "Pbar"), _symmetric(Phat, "Phat")
    frakA, Q, W, H2 = (as_matrix(M, n) for M, n in ((frakA, "frakA"), (Q, "Q"), (W, "W"), (H2, "H2")))
    eb, eh = np.linalg.eigvalsh(Pbar), np.linalg.eigvalsh(Phat)
    if eb[0] <= 0 or eh[0] <= 0:
        raise ValueError("Pbar and Phat must be positive definite")
    if not delta > 0:
        raise ValueError("delta must be positive")
    rep = Assumption4Report()
    for name, tau in (("M(0)", 0.0), ("M(T2)", T2)):
        m = float(np.linalg.eigvalsh(observer_flow_matrix(Pbar, Phat, delta, frakA, Q, W, H2, tau))[-1])
        rep.add(name, m < -tol, m, tol, "<")
    rep.omega1 = float(min(eb[0], eh[0]))
    rep.omega2 = float(max(eb[-1], math.exp(delta * T2) * eh[-1]))
    rep.add("omega1", rep.omega1 > 0, rep.omega1, 0.0, ">")
    rep.add("omega2", rep.omega2 >= rep.omega1, rep.omega2, 0.0, ">=")
    rep.add("jump", -eh[0] < 0, -float(eh[0]), 0.0, "<=")
    taus = np.linspace(0.0, T2, n_tau)
    worst = max(float(np.linalg.eigvalsh(observer_flow_matrix(Pbar, Phat, delta, frakA, Q, W, H2, t))[-1])
                for t in taus)
    rep.rho = -worst
    rep.add("rho", rep.rho > tol, rep.rho, tol, ">")
    return rep


def varpi_diagnostic(frakAc, Q, H2, rho):
    """Does a Young-inequality pair ``(varpi0, varpi1)`` exist?

    Uses ``calP`` solving ``He(calP frakAc) = -I``.  A pair exists for the
    observer Lyapunov function scaled by ``c`` iff ``c`` exceeds
    ``required_scale``; the pair itself is returned for the smallest
    admissible scale times 2.  Informational only.
    """
    frakAc, Q, H2 = as_matrix(frakAc), as_matrix(Q), as_matrix(H2)
    n = frakAc.shape[0]
    calP = sla.solve_continuous_lyapunov(frakAc.T, -np.eye(n))
    PQ = calP @ Q
    a0 = float(np.linalg.eigvalsh(H2.T @ PQ.T @ PQ @ H2)[-1])
    a1 = float(np.linalg.eigvalsh(PQ.T @ PQ)[-1])
    lam_q = 1.0
    # varpi0 > a0 / (c rho), varpi1 > a1 / (c rho), varpi0 + varpi1 < lambda_min(calQ)
    req = (a0 + a1) / (rho * lam_q) if rho > 0 else float("inf")
    nh = float(np.linalg.norm(H2, 2)) ** 2
    if math.isfinite(req):
        c = 2.0 * max(req, 1e-300)
        v0, v1 = a0 / (c * rho), a1 / (c * rho)
        if nh > 0 and v0 / max(v1, 1e-300) < nh:
            v0 = nh * v1
        ok = v0 + v1 < lam_q
    else:
        c, v0, v1, ok = float("inf"), float("nan"), float("nan"), False
    return {"required_scale": req, "scale": c, "varpi0": v0, "varpi1": v1, "exists": bool(ok)}


@dataclass(frozen=True)
class RegulationMetrics:
    final_error: float
    peak_error: float
    fitted_decay_rate: Optional[float]
    t: np.ndarray
    norms: np.ndarray

    @property
    def normalized_final_error(self):
        return self.final_error / self.peak_error if self.peak_error > 0 else 0.0

    def settle_time(self, eps):
        """First time after which ``||e_p|| <= eps`` for the rest of the series."""
        above = np.flatnonzero(self.norms > eps)
        if len(above) == 0:
            return float(self.t[0])
        if above[-1] == len(self.t) - 1:
            return float("inf")
        return float(self.t[above[-1] + 1])

    def as_dict(self):
        return {"final_error": self.final_error, "peak_error": self.peak_error,
                "normalized_final_error": self.normalized_final_error,
                "fitted_decay_rate": self.fitted_decay_rate}


def regulation_metrics(e_p, t) -> RegulationMetrics:
    """Error magnitudes and an exponential decay-rate fit.

    The rate is the least-squares slope of ``log ||e_p||`` over samples after
    the peak and within the last ``TAIL_FRACTION`` of the horizon, ignoring
    samples with ``||e_p|| <= FLOOR``.  It is ``None`` when fewer than two
    samples remain (for instance for an all-zero series).
    """
    e = np.asarray(e_p, dtype=float)
    t = np.asarray(t, dtype=float).ravel()
    if e.ndim == 1:
        e = e[:, None]
    if len(t) == 0 or e.shape[0] != len(t):
        raise ValueError("need a nonempty series with one time per sample")
    norms = np.linalg.norm(e, axis=1)
    peak = float(norms.max())
    final = float(norms[-1])
    start = t[0] + (1.0 - TAIL_FRACTION) * (t[-1] - t[0])
    i_peak = int(np.argmax(norms))
    mask = (t >= start) & (np.arange(len(t)) >= i_peak) & (norms > FLOOR)
    rate = None
    if mask.sum() >= 2 and np.ptp(t[mask]) > 0:
        rate = float(np.polyfit(t[mask], np.log(norms[mask]), 1)[0])
    return RegulationMetrics(final, peak, rate, t, norms)


def lyapunov_monotonicity(loop, P1, P2, delta, spec: SamplingSpec, n_arcs=20, horizon=10.0,
                          dt=None, seed=0, rel_tol=1e-10):
    """Lyapunov traces along arcs from random initial conditions.

    Each arc starts from a standard normal error-coordinate state and
    exosystem state and uses its own sampling sequence drawn with ``spec``'s
    mode.  An arc passes when no jump increases ``V`` by more than
    ``rel_tol`` times the trace scale and ``V`` decreases over every flow
    interval.

    Returns
    -------
    (ok, rows)
        ``rows`` holds one dict of trace statistics per arc.
    """
    rng = np.random.default_rng(seed)
    sysm = loop.error_system()
    q = loop.S.shape[0]
    dt = spec.T1 / 10 if dt is None else dt
    rows, ok = [], True
    for i in range(n_arcs):
        x0 = rng.standard_normal(sysm.dim - q)
        w0 = rng.standard_normal(q)
        sub = SamplingSpec(spec.T1, spec.T2, spec.mode, seed=int(rng.integers(2**31)), period=spec.period)
        times = generate_sampling_sequence(sub, horizon + spec.T2)
        arc = simulate(loop, x0, w0, times, horizon, dt, sub)
        tr = lyapunov_trace(arc, P1, P2, delta)
        passed = bool(tr.max_jump_increase <= rel_tol * tr.scale and tr.intervals_decreasing)
        ok &= passed
        rows.append({"arc": i, "pass": passed, "scale": tr.scale,
                     "max_jump_increase": tr.max_jump_increase,
                     "max_flow_increase": tr.max_flow_increase,
                     "intervals_decreasing": tr.intervals_decreasing,
                     "n_jumps": int(len(arc.jump_indices))})
    return ok, rows
