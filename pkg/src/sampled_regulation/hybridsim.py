"""Hybrid closed loops (linear flow, linear jump, countdown timer) and their simulation.

Every loop here reduces to a :class:`LinearHybridSystem`: between sampling
instants the stacked state ``s`` (including the exosystem state) obeys
``s' = F s``; at a sampling instant ``s+ = J s``.  The timer is not part of
``s``: it is reconstructed from the sampling sequence and recorded as the last
column of the arc.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionError, SimulationError
from .francis import solve_francis, solve_Z
from .model import (AugmentedPost, ExtendedPlantPre, PlantModel, RegulatorPost,
                    RegulatorPre, SamplingSpec, as_matrix, build_augmented_post)

__all__ = [
    "LinearHybridSystem", "HybridArc", "ClosedLoopPre", "ClosedLoopPost",
    "assemble_closed_loop_pre", "assemble_closed_loop_post", "closed_loop_matrices_pre",
    "simulate", "validate_arc", "extract_outputs", "lyapunov_trace", "LyapunovTrace",
    "write_arc_csv", "read_arc_csv", "arc_to_error",
]


@dataclass(frozen=True)
class LinearHybridSystem:
    """``s' = F s`` between samples, ``s+ = J s`` at samples.

    ``blocks`` names contiguous slices of the state (used for labels and by
    :func:`lyapunov_trace`).
    """

    F: np.ndarray
    J: np.ndarray
    labels: tuple
    blocks: Dict[str, slice] = field(default_factory=dict)
    kind: str = "generic"

    def __post_init__(self):
        object.__setattr__(self, "F", as_matrix(self.F, "F"))
        object.__setattr__(self, "J", as_matrix(self.J, "J"))
        n = self.F.shape[0]
        if self.F.shape != (n, n) or self.J.shape != (n, n) or len(self.labels) != n:
            raise DimensionError("flow, jump and labels must agree in dimension")

    @property
    def dim(self):
        return self.F.shape[0]


def _labels(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def _make_blocks(spec):
    blocks, labels, k = {}, [], 0
    for name, n in spec:
        blocks[name] = slice(k, k + n)
        labels += _labels(name + "_", n) if n > 1 else [name]
        k += n
    return blocks, tuple(labels)


# ---------------------------------------------------------------------------
# pre-processing loop
# ---------------------------------------------------------------------------

def closed_loop_matrices_pre(ext: ExtendedPlantPre, reg: RegulatorPre):
    """``(Abb, Bbb, Jbb, H)`` of the error-coordinate flow.

    ``Abb = [[A + B D_c C, B C_c], [B_c C, A_c]]``, ``Bbb = [B D_c; B_c]``,
    ``Jbb = [H C - C A, E]``.  The last formula drops a ``C Bbb`` term that
    vanishes because ``C B = 0``; this is asserted.
    """
    reg.check_against(ext)
    A, B, C = ext.A, ext.B, ext.C
    if np.any(C @ B != 0.0):
        raise DimensionError("C B must vanish")
    Abb = np.block([[A + B @ reg.D_c @ C, B @ reg.C_c], [reg.B_c @ C, reg.A_c]])
    Bbb = np.vstack([B @ reg.D_c, reg.B_c])
    Jbb = np.hstack([reg.H @ C - C @ A, reg.E])
    return Abb, Bbb, Jbb, reg.H


@dataclass(frozen=True)
class ClosedLoopPre:
    """Pre-processing loop in error coordinates ``(x~, theta~)``.

    ``x~ = (x_p - X_p w, z - Z w, x_c)`` and ``theta~ = theta - e_p``.
    """

    Abb: np.ndarray
    Bbb: np.ndarray
    Jbb: np.ndarray
    H: np.ndarray
    S: np.ndarray
    X_p: np.ndarray
    Z: np.ndarray
    plant: PlantModel
    ext: ExtendedPlantPre
    reg: RegulatorPre

    @property
    def N(self):
        return self.Abb.shape[0]

    @property
    def p(self):
        return self.H.shape[0]

    @property
    def flow_matrix(self):
        return np.block([[self.Abb, self.Bbb], [self.Jbb, self.H]])

    def error_system(self) -> LinearHybridSystem:
        N, p, q = self.N, self.p, self.S.shape[0]
        F = sla.block_diag(self.flow_matrix, self.S)
        J = np.eye(N + p + q)
        J[N:N + p, N:N + p] = 0.0
        n_p, n_z = self.ext.n_p, self.ext.n_z
        blocks, labels = _make_blocks([("xt_p", n_p), ("zt", n_z), ("x_c", N // 2),
                                       ("thetat", p), ("w", q)])
        blocks["x"] = slice(0, N)
        blocks["theta"] = blocks["thetat"]
        return LinearHybridSystem(F, J, labels, blocks, kind="pre")

    def physical_system(self) -> LinearHybridSystem:
        """Same loop in the original coordinates ``(x_p, z, x_c, theta, w)``."""
        pl, ext, r = self.plant, self.ext, self.reg
        n_p, n_z, n_c, p, q = pl.n_p, ext.n_z, self.N // 2, self.p, self.S.shape[0]
        blocks, labels = _make_blocks([("x_p", n_p), ("z", n_z), ("x_c", n_c),
                                       ("theta", p), ("w", q)])
        dim = n_p + n_z + n_c + p + q
        F = np.zeros((dim, dim))
        b = blocks
        F[b["x_p"], b["x_p"]] = pl.A_p
        F[b["x_p"], b["z"]] = pl.B_p @ ext.K
        F[b["x_p"], b["w"]] = pl.E_p
        F[b["z"], b["z"]] = ext.G1
        F[b["z"], b["x_c"]] = ext.G2 @ r.C_c
        F[b["z"], b["theta"]] = ext.G2 @ r.D_c
        F[b["x_c"], b["x_c"]] = r.A_c
        F[b["x_c"], b["theta"]] = r.B_c
        F[b["theta"], b["theta"]] = r.H
        F[b["theta"], b["x_c"]] = r.E
        F[b["w"], b["w"]] = self.S
        J = np.eye(dim)
        J[b["theta"], :] = 0.0
        J[b["theta"], b["x_p"]] = pl.C_p
        J[b["theta"], b["w"]] = -pl.F_p
        return LinearHybridSystem(F, J, labels, blocks, kind="pre-physical")

    def to_error(self, physical):
        """Map a physical state (or rows of states) to error coordinates."""
        s = np.atleast_2d(np.asarray(physical, dtype=float))
        n_p, n_z, n_c, p = self.plant.n_p, self.ext.n_z, self.N // 2, self.p
        xp, z, xc = s[:, :n_p], s[:, n_p:n_p + n_z], s[:, n_p + n_z:n_p + n_z + n_c]
        th, w = s[:, n_p + n_z + n_c:n_p + n_z + n_c + p], s[:, n_p + n_z + n_c + p:]
        ep = xp @ self.plant.C_p.T - w @ self.plant.F_p.T
        out = np.hstack([xp - w @ self.X_p.T, z - w @ self.Z.T, xc, th - ep, w])
        return out if np.ndim(physical) > 1 else out[0]

    def to_physical(self, error):
        s = np.atleast_2d(np.asarray(error, dtype=float))
        n_p, n_z, N, p = self.plant.n_p, self.ext.n_z, self.N, self.p
        xtp, zt, xc = s[:, :n_p], s[:, n_p:n_p + n_z], s[:, n_p + n_z:N]
        tht, w = s[:, N:N + p], s[:, N + p:]
        ep = xtp @ self.plant.C_p.T
        out = np.hstack([xtp + w @ self.X_p.T, zt + w @ self.Z.T, xc, tht + ep, w])
        return out if np.ndim(error) > 1 else out[0]


def assemble_closed_loop_pre(plant: PlantModel, S, ext: ExtendedPlantPre,
                             reg: RegulatorPre) -> ClosedLoopPre:
    """Assemble the loop and the steady-state maps ``X_p`` and ``Z``."""
    S = as_matrix(S, "S")
    Abb, Bbb, Jbb, H = closed_loop_matrices_pre(ext, reg)
    fr = solve_francis(plant.A_p, plant.B_p, plant.C_p, plant.E_p, plant.F_p, S)
    Z = solve_Z(S, ext.G1, ext.K, fr.R)
    return ClosedLoopPre(*(as_matrix(M) for M in (Abb, Bbb, Jbb, H, S, fr.X, Z)),
                         plant=plant, ext=ext, reg=reg)


# ---------------------------------------------------------------------------
# post-processing loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoopPost:
    """Post-processing loop in coordinates ``(chi1, chi1~, chi2~)``.

    ``chi1~ = x~_alpha - chi1`` is the observer error and
    ``chi2~ = chi2 - H2 chi1~``; the jump resets ``chi2~`` to zero.
    """

    aug: AugmentedPost
    Q: np.ndarray
    W: np.ndarray
    S: np.ndarray
    X_alpha: np.ndarray
    plant: PlantModel
    reg: RegulatorPost

    @property
    def n(self):
        return self.aug.n_alpha

    @property
    def p(self):
        return self.aug.p

    @property
    def h(self):
        A, H2, Q, W = self.aug.frakA, self.aug.H2, self.Q, self.W
        return np.block([[A - Q @ H2, -Q], [W @ H2 - H2 @ (A - Q @ H2), W + H2 @ Q]])

    @property
    def flow_matrix(self):
        n, p = self.n, self.p
        top = np.hstack([self.aug.frakAc, self.Q @ self.aug.H2, self.Q])
        bottom = np.hstack([np.zeros((n + p, n)), self.h])
        return np.vstack([top, bottom])

    def error_system(self) -> LinearHybridSystem:
        n, p, q = self.n, self.p, self.S.shape[0]
        F = sla.block_diag(self.flow_matrix, self.S)
        J = np.eye(2 * n + p + q)
        J[2 * n:2 * n + p, 2 * n:2 * n + p] = 0.0
        blocks, labels = _make_blocks([("chi1", n), ("chit1", n), ("chit2", p), ("w", q)])
        blocks["x"] = blocks["chit1"]
        blocks["theta"] = blocks["chit2"]
        return LinearHybridSystem(F, J, labels, blocks, kind="post")

    def physical_system(self) -> LinearHybridSystem:
        """Original coordinates ``(x_p, x_k, z, chi1, chi2, w)``."""
        aug, pl = self.aug, self.plant
        n_p, n_k = pl.n_p, self.reg.A_k.shape[0]
        n_z, n, p, q = self.reg.G1.shape[0], self.n, self.p, self.S.shape[0]
        blocks, labels = _make_blocks([("x_p", n_p), ("x_k", n_k), ("z", n_z), ("chi1", n),
                                       ("chi2", p), ("w", q)])
        b = blocks
        dim = 2 * n + p + q
        xa = slice(0, n)
        F = np.zeros((dim, dim))
        F[xa, xa] = aug.frakA
        F[xa, b["w"]] = np.vstack([aug.E_cl, np.zeros((n_z, q))])
        F[b["z"], b["chi1"]] = self.reg.G2 @ aug.H2
        F[b["chi1"], b["chi1"]] = aug.frakAc
        F[b["chi1"], b["chi2"]] = self.Q
        F[b["chi2"], b["chi2"]] = self.W
        F[b["w"], b["w"]] = self.S
        J = np.eye(dim)
        J[b["chi2"], :] = 0.0
        J[b["chi2"], b["x_p"]] = pl.C_p
        J[b["chi2"], b["w"]] = -pl.F_p
        J[b["chi2"], b["chi1"]] = -aug.H2
        return LinearHybridSystem(F, J, labels, blocks, kind="post-physical")

    def to_error(self, physical):
        s = np.atleast_2d(np.asarray(physical, dtype=float))
        n, p = self.n, self.p
        xa, chi1, chi2, w = s[:, :n], s[:, n:2 * n], s[:, 2 * n:2 * n + p], s[:, 2 * n + p:]
        xt = xa - w @ self.X_alpha.T
        c1 = xt - chi1
        c2 = chi2 - c1 @ self.aug.H2.T
        out = np.hstack([chi1, c1, c2, w])
        return out if np.ndim(physical) > 1 else out[0]

    def to_physical(self, error):
        s = np.atleast_2d(np.asarray(error, dtype=float))
        n, p = self.n, self.p
        chi1, c1, c2, w = s[:, :n], s[:, n:2 * n], s[:, 2 * n:2 * n + p], s[:, 2 * n + p:]
        xa = chi1 + c1 + w @ self.X_alpha.T
        chi2 = c2 + c1 @ self.aug.H2.T
        out = np.hstack([xa, chi1, chi2, w])
        return out if np.ndim(error) > 1 else out[0]


def assemble_closed_loop_post(plant: PlantModel, S, reg: RegulatorPost) -> ClosedLoopPost:
    """Assemble the observer loop; ``X_alpha = [X_M; Z]`` solves the joint regulator equations."""
    S = as_matrix(S, "S")
    aug = reg.augmented(plant)
    n_z = reg.G1.shape[0]
    n_m = aug.A_cl.shape[0]
    # X_M S = A_cl X_M + B_cl Z + E_cl, H1 X_M = F_p, Z S = G1 Z, solved jointly
    fr = solve_francis(aug.A_cl, aug.B_cl, aug.H1, aug.E_cl, plant.F_p, S, internal_model=reg.G1)
    X_alpha = np.vstack([fr.X, fr.R])
    if X_alpha.shape != (n_m + n_z, S.shape[0]):
        raise DimensionError("steady-state map has the wrong shape")
    reg.observer(plant)  # shape checks on Q, W
    return ClosedLoopPost(aug, reg.Q, reg.W, S, as_matrix(X_alpha, "X_alpha"), plant, reg)


# ---------------------------------------------------------------------------
# arcs
# ---------------------------------------------------------------------------

@dataclass
class HybridArc:
    """Samples ``(t[i], j[i], x[i])`` on a hybrid time domain.

    ``x`` carries the loop state followed by the timer in the last column.
    """

    t: np.ndarray
    j: np.ndarray
    x: np.ndarray
    labels: tuple
    blocks: Dict[str, slice] = field(default_factory=dict)
    kind: str = "generic"

    @property
    def jump_indices(self):
        """Positions ``i`` with ``j[i] = j[i-1] + 1`` (the post-jump samples)."""
        return np.flatnonzero(np.diff(self.j) > 0) + 1

    @property
    def jump_times(self):
        return self.t[self.jump_indices]

    @property
    def tau(self):
        if "tau" not in self.labels:
            raise SimulationError("arc has no timer coordinate")
        return self.x[:, self.labels.index("tau")]

    def column(self, label):
        return self.x[:, self.labels.index(label)]

    def block(self, name):
        return self.x[:, self.blocks[name]]

    def flow_intervals(self):
        """``(start, stop)`` index ranges (stop exclusive) of each flow interval."""
        cuts = [0, *self.jump_indices.tolist(), len(self.t)]
        return [(a, b) for a, b in zip(cuts[:-1], cuts[1:])]


def validate_arc(arc: HybridArc, T1=None, T2=None, ulps=4):
    """Return the list of violated hybrid-time-domain invariants (empty if valid)."""
    problems = []
    t, j = arc.t, arc.j
    if len(t) != len(j) or len(t) != arc.x.shape[0]:
        problems.append("length mismatch")
        return problems
    dt, dj = np.diff(t), np.diff(j)
    if np.any(dt < 0):
        problems.append("t decreases")
    if np.any((dj != 0) & (dj != 1)):
        problems.append("j does not increase by exactly one at jumps")
    if np.any((dj == 1) & (dt != 0)):
        problems.append("jump samples do not share the same t")
    if np.any((dj == 0) & (dt <= 0)):
        problems.append("t not strictly increasing inside a flow interval")
    if T1 is not None and T2 is not None:
        jt = arc.jump_times
        prev = 0.0
        for k, tk in enumerate(jt):
            slack = ulps * np.spacing(max(tk, 1.0))
            gap = tk - prev
            if k == 0:
                if not (0.0 < tk <= T2 + slack):
                    problems.append(f"first jump at {tk} outside (0, T2]")
            elif not (T1 - slack <= gap <= T2 + slack):
                problems.append(f"gap {k} = {gap} outside [{T1}, {T2}]")
            prev = tk
    return problems


def _as_system(loop, coordinates):
    if isinstance(loop, LinearHybridSystem):
        return loop
    if coordinates == "error":
        return loop.error_system()
    if coordinates == "physical":
        return loop.physical_system()
    raise ValueError("coordinates must be 'error' or 'physical'")


def simulate(loop, x0, w0, times, t_end, dt, spec: Optional[SamplingSpec] = None,
             coordinates="error") -> HybridArc:
    """Simulate a hybrid loop over the sampling instants ``times``.

    Parameters
    ----------
    loop : ClosedLoopPre, ClosedLoopPost or LinearHybridSystem
    x0 : array
        Initial loop state without the exosystem part, in the chosen coordinates.
    w0 : array
        Initial exosystem state (empty for a bare :class:`LinearHybridSystem`
        whose state has no exosystem block).
    times : sequence of float
        Sampling instants; those in ``(0, t_end]`` trigger jumps.
    t_end, dt : float
        Horizon and output step.  Flows are propagated exactly with the
        matrix exponential, so ``dt`` sets only the sampling density of the
        arc.  It must not exceed ``T1 / 10`` (``spec.T1`` if given, else the
        smallest gap in ``times``).

    Returns
    -------
    HybridArc
        Two samples (``j`` and ``j + 1``) are recorded at each jump time.
    """
    sysm = _as_system(loop, coordinates)
    times = np.asarray(times, dtype=float).ravel()
    if np.any(np.diff(times) <= 0):
        raise SimulationError("sampling instants must be strictly increasing")
    if not (t_end > 0 and dt > 0):
        raise SimulationError("t_end and dt must be positive")
    if spec is not None:
        T1 = spec.T1
    elif len(times) > 1:
        T1 = float(np.min(np.diff(np.r_[0.0, times])))
    elif len(times) == 1:
        T1 = float(times[0])
    else:
        T1 = np.inf
    if dt > T1 / 10 * (1 + 1e-12):
        raise SimulationError(f"dt={dt} exceeds T1/10={T1 / 10}")

    s = np.concatenate([np.ravel(np.asarray(x0, dtype=float)), np.ravel(np.asarray(w0, dtype=float))])
    if s.size != sysm.dim:
        raise DimensionError(f"initial state has {s.size} entries, loop needs {sysm.dim}")
    jumps = times[(times > 0) & (times <= t_end)]
    future = times[times > t_end]
    F, Jm = sysm.F, sysm.J
    step = sla.expm(F * dt)

    ts, js, xs, taus = [], [], [], []
    t, j = 0.0, 0

    def record(t, j, s, tau):
        if not np.all(np.isfinite(s)):
            raise SimulationError(f"non-finite state at t={t}, j={j}")
        ts.append(t)
        js.append(j)
        xs.append(s.copy())
        taus.append(tau)

    bounds = list(jumps)
    if not bounds or bounds[-1] < t_end:
        bounds.append(t_end)
    # timer target after each instant: the next sampling instant
    nexts = np.r_[jumps, future[:1]]
    tk_next = nexts[0] if len(nexts) else t_end
    record(t, j, s, tk_next - t)
    k = 0
    for stop in bounds:
        # flow from t to stop
        n_full = int(np.floor((stop - t) / dt * (1 + 1e-12)))
        target = tk_next
        for _ in range(n_full):
            if t + dt >= stop:
                break
            s = step @ s
            t = t + dt
            record(t, j, s, target - t)
        rem = stop - t
        if rem > 0:
            s = sla.expm(F * rem) @ s
            t = stop
            record(t, j, s, target - t)
        if k < len(jumps) and stop == jumps[k]:
            s = Jm @ s
            j += 1
            k += 1
            tk_next = nexts[k] if k < len(nexts) else t_end
            record(t, j, s, tk_next - t)
    x = np.column_stack([np.array(xs), np.array(taus)])
    labels = tuple(sysm.labels) + ("tau",)
    blocks = dict(sysm.blocks)
    blocks["tau"] = slice(sysm.dim, sysm.dim + 1)
    return HybridArc(np.array(ts), np.array(js, dtype=int), x, labels, blocks, sysm.kind)


# ---------------------------------------------------------------------------
# post-processing of arcs
# ---------------------------------------------------------------------------

def extract_outputs(arc: HybridArc, loop):
    """Original-coordinate signals along ``arc``.

    Pre-processing: ``e_p``, ``theta``, ``y_p``, ``y_w``.  Post-processing:
    ``e_p``, ``ehat_p``, ``y_p``, ``y_w``.  Each value is a ``(len(t), p)``
    array; ``t`` and ``j`` are included for convenience.
    """
    pl = loop.plant
    w = arc.block("w")
    if isinstance(loop, ClosedLoopPre):
        if arc.kind == "pre":
            xtp = arc.block("xt_p") if "xt_p" in arc.blocks else arc.x[:, :pl.n_p]
            xp = xtp + w @ loop.X_p.T
            theta = arc.block("thetat") + xtp @ pl.C_p.T
        elif arc.kind == "pre-physical":
            xp = arc.block("x_p")
            theta = arc.block("theta")
        else:
            raise SimulationError(f"arc of kind {arc.kind!r} does not match a pre-processing loop")
        yp, yw = xp @ pl.C_p.T, w @ pl.F_p.T
        return {"t": arc.t, "j": arc.j, "e_p": yp - yw, "theta": theta, "y_p": yp, "y_w": yw}
    if isinstance(loop, ClosedLoopPost):
        H2 = loop.aug.H2
        if arc.kind == "post":
            chi1 = arc.block("chi1")
            xa = chi1 + arc.block("chit1") + w @ loop.X_alpha.T
        elif arc.kind == "post-physical":
            chi1 = arc.block("chi1")
            xa = arc.x[:, :loop.n]
        else:
            raise SimulationError(f"arc of kind {arc.kind!r} does not match a post-processing loop")
        yp, yw = xa @ H2.T, w @ pl.F_p.T
        return {"t": arc.t, "j": arc.j, "e_p": yp - yw, "ehat_p": chi1 @ H2.T, "y_p": yp, "y_w": yw}
    raise SimulationError("unknown loop type")


def arc_to_error(arc: HybridArc, loop) -> HybridArc:
    """Re-express a physical-coordinate arc in the loop's error coordinates."""
    if arc.kind not in ("pre-physical", "post-physical"):
        raise SimulationError(f"arc of kind {arc.kind!r} is not in physical coordinates")
    sysm = loop.error_system()
    x = np.column_stack([loop.to_error(arc.x[:, :-1]), arc.x[:, -1]])
    blocks = dict(sysm.blocks)
    blocks["tau"] = slice(sysm.dim, sysm.dim + 1)
    return HybridArc(arc.t, arc.j, x, tuple(sysm.labels) + ("tau",), blocks, sysm.kind)


@dataclass(frozen=True)
class LyapunovTrace:
    t: np.ndarray
    j: np.ndarray
    V: np.ndarray
    max_flow_increase: float
    max_jump_increase: float
    intervals_decreasing: bool

    @property
    def scale(self):
        return float(np.max(np.abs(self.V))) if len(self.V) else 0.0


def lyapunov_trace(arc: HybridArc, P1, P2, delta, x_block="x", theta_block="theta") -> LyapunovTrace:
    """``V = x^T P1 x + exp(delta tau) theta^T P2 theta`` along ``arc``.

    For pre-processing arcs ``x = x~`` and ``theta = theta~``; for observer
    arcs the same blocks name ``chi1~`` and ``chi2~``.

    ``max_flow_increase`` is the largest sample-to-sample increase inside a
    flow interval, ``max_jump_increase`` the largest increase across a jump,
    and ``intervals_decreasing`` tells whether ``V`` ends every flow interval
    of positive length strictly below where it started (or both are zero).
    """
    P1, P2 = as_matrix(P1, "P1"), as_matrix(P2, "P2")
    for P, nm in ((P1, "P1"), (P2, "P2")):
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ValueError(f"{nm} must be symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError(f"{nm} must be positive definite")
    if x_block not in arc.blocks or theta_block not in arc.blocks:
        raise SimulationError("arc lacks the requested blocks")
    x, th, tau = arc.block(x_block), arc.block(theta_block), arc.tau
    if x.shape[1] != P1.shape[0] or th.shape[1] != P2.shape[0]:
        raise DimensionError("P1/P2 do not match the arc blocks")
    V = np.einsum("ij,jk,ik->i", x, P1, x) + np.exp(delta * tau) * np.einsum("ij,jk,ik->i", th, P2, th)
    jumps = arc.jump_indices
    max_jump = float(np.max(V[jumps] - V[jumps - 1])) if len(jumps) else -np.inf
    max_flow = -np.inf
    decreasing = True
    for a, b in arc.flow_intervals():
        if b - a < 2:
            continue
        dv = np.diff(V[a:b])
        max_flow = max(max_flow, float(dv.max()))
        if not (V[b - 1] < V[a] or (V[a] == 0.0 and V[b - 1] == 0.0)):
            decreasing = False
    return LyapunovTrace(arc.t, arc.j, V, max_flow, max_jump, decreasing)


# ---------------------------------------------------------------------------
# text export
# ---------------------------------------------------------------------------

def write_arc_csv(arc: HybridArc, path, delimiter=","):
    """Header ``t,j,<labels>``; floats with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["t", "j", *arc.labels])
        for t, j, row in zip(arc.t, arc.j, arc.x):
            w.writerow(["%.17g" % t, str(int(j)), *("%.17g" % v for v in row)])


def read_arc_csv(path, delimiter=",") -> HybridArc:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    head, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(head)))
    return HybridArc(data[:, 0], data[:, 1].astype(int), data[:, 2:], tuple(head[2:]))
