"""Affine symmetric-matrix inequalities: containers, assembly, solving, checking.

A problem is a list of named matrix variables and a list of constraints, each
an affine map ``values -> symmetric matrix`` together with a sense.  Affine
maps are ordinary Python callables on a ``{name: ndarray}`` dict; their
coefficient form ``F(x) = F0 + sum_i x_i F_i`` is extracted numerically by
evaluation at zero and at the unit basis points, and that form is what is
handed to the conic solver.  Whatever the solver returns is re-checked by
:func:`verify_assignment`, which evaluates the original callables.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .certificate import CertificateReport
from .exceptions import DimensionError, LmiInfeasibleError
from .model import ExtendedPlantPre, as_matrix

__all__ = [
    "MatrixVariable", "LmiConstraint", "LmiProblem", "LmiAssignment",
    "solve_feasibility", "verify_assignment", "m2_of_tau", "He",
    "assemble_pre_lmis", "assemble_post_lmis", "assemble_analysis_lmis",
    "assemble_observer_analysis_lmis", "post_m_of_tau",
    "problem_to_dict", "problem_from_dict", "assignment_to_dict",
    "assignment_from_dict", "SENSES", "PRE_VARIABLES",
]

SENSES = ("<=", "<", ">=", ">", "==")
STRICT = ("<", ">")


def He(M):
    """``M + M^T``."""
    return M + M.T


def _sym(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class MatrixVariable:
    name: str
    shape: tuple
    symmetric: bool = False

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 2 or min(shape) < 1:
            raise DimensionError(f"variable {self.name}: bad shape {self.shape}")
        if self.symmetric and shape[0] != shape[1]:
            raise DimensionError(f"symmetric variable {self.name} must be square")
        object.__setattr__(self, "shape", shape)

    @property
    def size(self):
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c

    def unpack(self, vec):
        r, c = self.shape
        if self.symmetric:
            M = np.zeros((r, r))
            iu = np.triu_indices(r)
            M[iu] = vec
            return M + np.triu(M, 1).T
        return np.asarray(vec, dtype=float).reshape(r, c)

    def pack(self, M):
        M = np.asarray(M, dtype=float)
        if M.shape != self.shape:
            raise DimensionError(f"{self.name}: expected {self.shape}, got {M.shape}")
        if self.symmetric:
            return _sym(M)[np.triu_indices(self.shape[0])]
        return M.ravel()


@dataclass(frozen=True)
class LmiConstraint:
    """``func(values)`` compared against zero with ``sense``.

    ``gap`` is the strictness gap for ``<``/``>``; ``None`` means the default
    ``1e-7 * (1 + ||constant term||_2)`` filled in by :class:`LmiProblem`.
    """

    name: str
    func: Callable[[Dict[str, np.ndarray]], np.ndarray]
    sense: str = "<="
    gap: Optional[float] = None
    group: str = ""

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"constraint {self.name}: sense must be one of {SENSES}")

    @property
    def strict(self):
        return self.sense in STRICT

    @property
    def sign(self):
        # multiply by this to bring the constraint to "<= 0" form
        return -1.0 if self.sense in (">=", ">") else 1.0


class _AffineMap:
    """Callable rebuilt from a stored coefficient form (used after loading)."""

    def __init__(self, variables, F0, coeffs):
        self.variables = variables
        self.F0 = F0
        self.coeffs = coeffs

    def __call__(self, values):
        out = self.F0.copy()
        offset = 0
        for v in self.variables:
            x = v.pack(values[v.name])
            for k in range(v.size):
                Fi = self.coeffs.get(offset + k)
                if Fi is not None and x[k] != 0.0:
                    out = out + x[k] * Fi
            offset += v.size
        return out


class LmiProblem:
    """Immutable container of variables and constraints.

    Parameters
    ----------
    variables : sequence of MatrixVariable
    constraints : sequence of LmiConstraint
    meta : dict, optional
        Free-form metadata.  Assemblers store the hyperparameters here and,
        for the two synthesis families, an ``"m_of_tau"`` callable used by
        :func:`m2_of_tau`.
    """

    def __init__(self, variables: Sequence[MatrixVariable],
                 constraints: Sequence[LmiConstraint], meta=None):
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise DimensionError("duplicate variable names")
        cnames = [c.name for c in constraints]
        if len(set(cnames)) != len(cnames):
            raise DimensionError("duplicate constraint names")
        self.variables = tuple(variables)
        self._index = {v.name: v for v in self.variables}
        self.meta = MappingProxyType(dict(meta or {}))
        self._coeff_cache = {}
        filled = []
        for c in constraints:
            F0 = self._coefficients_raw(c)[0]
            if c.gap is None:
                gap = 1e-7 * (1.0 + np.linalg.norm(F0, 2)) if c.strict else 0.0
                c = LmiConstraint(c.name, c.func, c.sense, float(gap), c.group)
            filled.append(c)
        self.constraints = tuple(filled)

    # -- variable vector bookkeeping ------------------------------------
    @property
    def n_scalar(self):
        return sum(v.size for v in self.variables)

    def variable(self, name) -> MatrixVariable:
        return self._index[name]

    def zero_values(self):
        return {v.name: np.zeros(v.shape) for v in self.variables}

    def unpack(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_scalar:
            raise DimensionError(f"expected {self.n_scalar} scalars, got {x.size}")
        out, k = {}, 0
        for v in self.variables:
            out[v.name] = v.unpack(x[k:k + v.size])
            k += v.size
        return out

    def pack(self, values):
        missing = [v.name for v in self.variables if v.name not in values]
        if missing:
            raise DimensionError(f"missing variables: {missing}")
        return np.concatenate([self.variable(n).pack(values[n]) for n in self._index])

    def constraint(self, name) -> LmiConstraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def groups(self):
        """Constraint group names in order of first appearance."""
        seen = []
        for c in self.constraints:
            g = c.group or c.name
            if g not in seen:
                seen.append(g)
        return seen

    # -- evaluation -------------------------------------------------------
    def _call(self, c, values):
        try:
            M = np.asarray(c.func(values), dtype=float)
        except KeyError as exc:
            raise DimensionError(f"constraint {c.name} references undeclared variable {exc}") from None
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"constraint {c.name} is not square: {M.shape}")
        return _sym(M)

    def evaluate(self, constraint, values):
        """Symmetrized value of one constraint (by name or object)."""
        c = self.constraint(constraint) if isinstance(constraint, str) else constraint
        return self._call(c, dict(values))

    def _coefficients_raw(self, c):
        if c.name in self._coeff_cache:
            return self._coeff_cache[c.name]
        vals = self.zero_values()
        F0 = self._call(c, vals)
        Fs = []
        for v in self.variables:
            for k in range(v.size):
                e = np.zeros(v.size)
                e[k] = 1.0
                vals[v.name] = v.unpack(e)
                Fs.append(self._call(c, vals) - F0)
            vals[v.name] = np.zeros(v.shape)
        Fs = np.array(Fs).reshape(len(Fs), *F0.shape)
        # affinity spot check at a random point
        rng = np.random.default_rng(0)
        x = rng.standard_normal(len(Fs))
        lhs = self._call(c, self.unpack(x))
        rhs = F0 + np.tensordot(x, Fs, axes=1)
        scale = 1.0 + np.abs(F0).max() + np.abs(Fs).max(initial=0.0) * np.abs(x).sum()
        if np.abs(lhs - rhs).max() > 1e-9 * scale:
            raise DimensionError(f"constraint {c.name} is not affine in the variables")
        self._coeff_cache[c.name] = (F0, Fs)
        return F0, Fs

    def coefficients(self, constraint):
        """``(F0, F)`` with ``F[i]`` the coefficient of scalar variable ``i``."""
        c = self.constraint(constraint) if isinstance(constraint, str) else constraint
        return self._coefficients_raw(c)


@dataclass(frozen=True)
class LmiAssignment:
    """Candidate values for every variable of ``problem``."""

    problem: LmiProblem
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        vals = {}
        for v in self.problem.variables:
            if v.name not in self.values:
                raise DimensionError(f"assignment is missing {v.name}")
            M = as_matrix(self.values[v.name], v.name, v.shape)
            if v.symmetric:
                M = as_matrix(_sym(M), v.name)
            vals[v.name] = M
        object.__setattr__(self, "values", MappingProxyType(vals))

    def __getitem__(self, name):
        return self.values[name]

    def matrix(self, constraint_name):
        return self.problem.evaluate(constraint_name, self.values)

    @property
    def margins(self):
        """Constraint name -> achieved margin, recomputed on every access.

        ``<=``/``<``: largest eigenvalue; ``>=``/``>``: smallest eigenvalue;
        ``==``: largest absolute entry.
        """
        out = {}
        for c in self.problem.constraints:
            M = self.problem.evaluate(c, self.values)
            out[c.name] = _margin(M, c.sense)
        return out


def _margin(M, sense):
    if sense == "==":
        return float(np.abs(M).max())
    w = np.linalg.eigvalsh(M)
    return float(w[-1] if sense in ("<=", "<") else w[0])


def _nonstrict_tol(M):
    return 1e-9 * max(1.0, float(np.abs(M).max()))


def verify_assignment(problem: LmiProblem, assignment, tol: Optional[float] = None,
                      floor: float = 0.0) -> CertificateReport:
    """Check every constraint by a symmetric eigensolver.

    Strict senses pass iff the margin has the right sign and ``|margin| >
    max(floor, tol)``; ``tol`` defaults to each constraint's own gap.  Non-strict senses
    pass iff the margin has the right sign up to ``1e-9 * max(1, max|entry|)``
    round-off slack; equalities use the same slack on the largest entry.
    """
    values = assignment.values if isinstance(assignment, LmiAssignment) else assignment
    rep = CertificateReport()
    for c in problem.constraints:
        M = problem.evaluate(c, values)
        m = _margin(M, c.sense)
        if c.strict:
            t = max(floor, c.gap if tol is None else tol)
            ok = (-c.sign * m) > t
        elif c.sense == "==":
            t = _nonstrict_tol(M)
            ok = m <= t
        else:
            t = _nonstrict_tol(M)
            ok = c.sign * m <= t
        rep.add(c.name, ok, m, t, detail=c.sense)
    return rep


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

def _normalized(problem, gap_scale, tol):
    """Stack every inequality as ``N0 + sum x_i N_i + g I <= t I``."""
    blocks, eqs = [], []
    for c in problem.constraints:
        F0, Fs = problem.coefficients(c)
        if c.sense == "==":
            iu = np.triu_indices(F0.shape[0])
            eqs.append((Fs[:, iu[0], iu[1]].T, -F0[iu]))
            continue
        g = gap_scale * max(tol, c.gap) if c.strict else 0.0
        blocks.append((c, c.sign * F0, c.sign * Fs, g))
    return blocks, eqs


def _solve_cvxopt(blocks, eqs, nx, cap, max_iter, tol):
    import cvxopt
    from cvxopt import solvers

    c = cvxopt.matrix(np.r_[np.zeros(nx), 1.0])
    Gs, hs = [], []
    for _, N0, Ns, g in blocks:
        d = N0.shape[0]
        G = np.empty((d * d, nx + 1))
        G[:, :nx] = Ns.reshape(nx, d * d).T  # symmetric, so row/column major agree
        G[:, nx] = -np.eye(d).ravel()
        Gs.append(cvxopt.matrix(G))
        hs.append(cvxopt.matrix(-(N0 + g * np.eye(d))))
    Gl = cvxopt.matrix(np.r_[np.zeros(nx), -1.0].reshape(1, -1))
    hl = cvxopt.matrix([float(cap)])
    kw = {}
    if eqs:
        A = np.vstack([a for a, _ in eqs])
        b = np.concatenate([b for _, b in eqs])
        A = np.hstack([A, np.zeros((A.shape[0], 1))])
        kw = {"A": cvxopt.matrix(A), "b": cvxopt.matrix(b)}
    opts = {"show_progress": False, "maxiters": int(max_iter),
            "abstol": 1e-10, "reltol": 1e-9, "feastol": min(1e-9, 0.1 * tol)}
    sol = solvers.sdp(c, Gl=Gl, hl=hl, Gs=Gs, hs=hs, options=opts, **kw)
    if sol["x"] is None:
        return None, sol["status"]
    z = np.array(sol["x"]).ravel()
    return z[:nx], sol["status"]


def _solve_cvxpy(blocks, eqs, nx, cap, max_iter, tol, solver):
    import cvxpy as cp

    x = cp.Variable(nx)
    t = cp.Variable()
    cons = [t >= -cap]
    for _, N0, Ns, g in blocks:
        d = N0.shape[0]
        expr = cp.reshape(Ns.reshape(nx, d * d).T @ x, (d, d), order="F") + N0 + g * np.eye(d)
        cons.append(0.5 * (expr + expr.T) - t * np.eye(d) << 0)
    for A, b in eqs:
        cons.append(A @ x == b)
    prob = cp.Problem(cp.Minimize(t), cons)
    kw = {"max_iter": int(max_iter)}
    if solver == "SCS":
        kw["eps"] = 1e-9
    with warnings.catch_warnings():
        # inaccurate solutions are caught by the post-hoc verification
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver=solver, **kw)
    if x.value is None:
        return None, prob.status
    return np.asarray(x.value).ravel(), prob.status


BACKENDS = ("cvxopt", "clarabel", "scs")


def _run_backend(name, blocks, eqs, nx, cap, max_iter, tol):
    if name == "cvxopt":
        return _solve_cvxopt(blocks, eqs, nx, cap, max_iter, tol)
    return _solve_cvxpy(blocks, eqs, nx, cap, max_iter, tol, name.upper())


def solve_feasibility(problem: LmiProblem, tol: float = 1e-7, max_iter: int = 200,
                      solver="auto", margin_cap: float = 1e-2) -> LmiAssignment:
    """Find values satisfying every constraint of ``problem``.

    The feasibility question is posed as the conic program::

        minimize t  s.t.  s_k F_k(x) + g_k I <= t I  (every k),  t >= -margin_cap

    where ``s_k`` flips ``>=`` constraints and ``g_k = max(tol, gap_k)`` for
    strict constraints, ``0`` otherwise.  The problem is feasible iff the
    optimal ``t`` is nonpositive; the cap keeps homogeneous problems bounded.
    A candidate is only returned after :func:`verify_assignment` accepts it.
    When a strict constraint misses its gap by less than a factor of ten, the
    program is solved once more with every strict gap enlarged tenfold.

    Parameters
    ----------
    solver : str
        ``"auto"`` (cvxopt, then Clarabel, then SCS), or one backend name.

    Raises
    ------
    LmiInfeasibleError
        With the best iterate, its worst margin and a reason.
    """
    order = BACKENDS if solver == "auto" else (solver,)
    for name in order:
        if name not in BACKENDS:
            raise ValueError(f"unknown solver {name!r}; choose from {BACKENDS}")
    nx = problem.n_scalar
    best = None
    retried = False
    scale = 2.0
    while True:
        blocks, eqs = _normalized(problem, scale, tol)
        near_miss = False
        for name in order:
            try:
                x, status = _run_backend(name, blocks, eqs, nx, margin_cap, max_iter, tol)
            except Exception as exc:  # solver crash: try the next backend
                status, x = f"error: {exc}", None
            if x is None:
                best = best or (None, status, name, None, None)
                continue
            values = problem.unpack(x)
            rep = verify_assignment(problem, values, floor=tol)
            if rep.overall:
                return LmiAssignment(problem, values, info={"solver": name, "status": status,
                                                            "gap_scale": scale, "tol": tol})
            worst = _worst(problem, rep)
            if best is None or best[3] is None or worst[1] < best[3]:
                best = (values, status, name, worst[1], worst[0])
            near_miss = near_miss or _near_miss(problem, rep)
        if near_miss and not retried:
            retried = True
            scale *= 10.0
            continue
        break
    values, status, name, worst_margin, worst_name = best
    if values is None:
        reason = "numerical"
    elif "unknown" in str(status) or "inaccurate" in str(status):
        reason = "iteration-limit"
    elif worst_margin is not None and worst_margin > 10 * tol:
        reason = "infeasible"
    else:
        reason = "numerical"
    raise LmiInfeasibleError(
        f"no verified solution (last solver status {status!r}, worst constraint "
        f"{worst_name!r}, violation {worst_margin})", reason=reason,
        best_values=values, worst_margin=worst_margin, worst_constraint=worst_name)


def _violation(problem, check):
    c = problem.constraint(check.name)
    if c.sense == "==":
        return check.margin
    signed = c.sign * check.margin
    return signed + (check.tolerance if c.strict else 0.0)


def _worst(problem, rep):
    v = [(ch.name, _violation(problem, ch)) for ch in rep.checks if not ch.passed]
    return max(v, key=lambda p: p[1])


def _near_miss(problem, rep):
    for ch in rep.failed():
        c = problem.constraint(ch.name)
        if not c.strict:
            return False
        if c.sign * ch.margin > 0 or abs(ch.margin) < 0.1 * ch.tolerance:
            return False
    return bool(rep.failed())


def m2_of_tau(assignment: LmiAssignment, tau: float):
    """Evaluate the timer-dependent flow matrix of a synthesis problem at ``tau``.

    The problem must come from :func:`assemble_pre_lmis`,
    :func:`assemble_post_lmis` or :func:`assemble_analysis_lmis`.
    """
    meta = assignment.problem.meta
    if "m_of_tau" not in meta:
        raise ValueError("problem has no timer-dependent matrix")
    T2 = meta["T2"]
    if not (0.0 <= tau <= T2):
        raise ValueError(f"tau={tau} outside [0, {T2}]")
    return _sym(meta["m_of_tau"](assignment.values, tau))


# ---------------------------------------------------------------------------
# assemblies
# ---------------------------------------------------------------------------

PRE_VARIABLES = ("X", "Y", "V", "K1", "K2", "K3", "K4", "P2", "P3", "P5", "P6",
                 "P8", "Z1", "Z2")


_MAX_WEIGHT_EXP = 30.0


def _timer_weights(delta, tau):
    """``(a, b)`` with ``a / b = exp(delta tau)``.

    Timer-weighted terms are multiplied by ``a`` and the others by ``b``.
    Normally ``b = 1``; for ``delta tau`` beyond 30 the whole matrix is
    divided by ``exp(delta tau)`` instead, which leaves its definiteness
    unchanged and keeps every entry representable.
    """
    x = delta * tau
    if x <= _MAX_WEIGHT_EXP:
        return math.exp(x), 1.0
    return 1.0, math.exp(-x)


def _check_hyper(T2, alpha=None, delta=None):
    if not (np.isfinite(T2) and T2 > 0):
        raise ValueError("T2 must be positive")
    if alpha is not None and not (np.isfinite(alpha) and alpha > 0):
        raise ValueError("alpha must be positive")
    if delta is not None and not (np.isfinite(delta) and delta > 0):
        raise ValueError("delta must be positive")


def assemble_pre_lmis(ext: ExtendedPlantPre, T2, alpha, delta, m1_form="relaxed",
                      A0=None, C0=None) -> LmiProblem:
    """Design inequalities for the hybrid stabilizer and holding device.

    Parameters
    ----------
    ext : ExtendedPlantPre
    T2, alpha, delta : float
        Maximum sampling gap, inverse-bound linearization point, timer weight.
    m1_form : {"relaxed", "congruence"}
        ``"relaxed"`` uses ``He([[Pi1, Pi2, 0], [0, -P5, 0], [Psi, 0, -P8]])``, which
        doubles the ``-P5`` and ``-P8`` blocks and so does not imply the analysis
        inequality; certification then falls back to a re-solve.
        ``"congruence"`` halves the ``-P5`` and ``-P8`` blocks inside ``He``,
        which is the exact congruence transform of the analysis inequality.
    A0, C0 : array, optional
        Matrices used where the constant ``A`` and ``C`` enter ``Pi1`` and the
        hold-gain coupling block.  Default: the extended plant's ``A`` and ``C``.

    Returns
    -------
    LmiProblem
        Constraint groups: ``P1bar``, ``M1hat``, ``inverse_bound``, ``P5_P6``,
        ``M2hat`` (two endpoints), ``conditioning`` (three) and ``positivity``.
    """
    _check_hyper(T2, alpha, delta)
    if m1_form not in ("relaxed", "congruence"):
        raise ValueError("m1_form must be 'relaxed' or 'congruence'")
    A, B, C = ext.A, ext.B, ext.C
    A0 = A if A0 is None else as_matrix(A0, "A0", A.shape)
    C0 = C if C0 is None else as_matrix(C0, "C0", C.shape)
    n, p, nv = ext.n, ext.p, ext.n_v
    N = 2 * n
    In, IN, Ip = np.eye(n), np.eye(N), np.eye(p)
    f = 1.0 if m1_form == "relaxed" else 0.5

    variables = [
        MatrixVariable("X", (n, n), True), MatrixVariable("Y", (n, n), True),
        MatrixVariable("V", (n, n)), MatrixVariable("K1", (nv, n)),
        MatrixVariable("K2", (nv, p)), MatrixVariable("K3", (n, n)),
        MatrixVariable("K4", (n, p)), MatrixVariable("P2", (p, p), True),
        MatrixVariable("P3", (N, N), True), MatrixVariable("P5", (p, p), True),
        MatrixVariable("P6", (p, p), True), MatrixVariable("P8", (N, N), True),
        MatrixVariable("Z1", (p, p)), MatrixVariable("Z2", (p, n)),
    ]

    def P1bar(v):
        return np.block([[v["Y"], In], [In, v["X"]]])

    def Pi1(v):
        return np.block([[A @ v["Y"] + B @ v["K1"], A0 + B @ v["K2"] @ C],
                         [v["K3"], v["X"] @ A + v["K4"] @ C]])

    def Pi2(v):
        return np.vstack([B @ v["K2"], v["K4"]])

    def Psi(v):
        return np.block([[v["Y"], In], [v["V"].T, np.zeros((n, n))]])

    def M1hat(v):
        T = np.block([
            [Pi1(v), Pi2(v), np.zeros((N, N))],
            [np.zeros((p, N)), -f * v["P5"], np.zeros((p, N))],
            [Psi(v), np.zeros((N, p)), -f * v["P8"]],
        ])
        return He(T)

    def M2hat(v, tau):
        s, b = _timer_weights(delta, tau)
        L1 = He(v["Z1"]) - delta * v["P2"]
        L2 = np.hstack([v["Z1"] @ C0 - v["P2"] @ C0 @ A0, v["Z2"]])
        return np.block([[s * L1 + b * v["P6"], s * L2], [s * L2.T, -b * v["P3"]]])

    def positivity(v):
        from scipy.linalg import block_diag
        return block_diag(v["P2"], v["P3"], v["P5"], v["P6"], v["P8"])

    cons = [
        LmiConstraint("P1bar", P1bar, ">", group="P1bar"),
        LmiConstraint("M1hat", M1hat, "<=", group="M1hat"),
        LmiConstraint("inverse_bound", lambda v: v["P3"] - 2 * alpha * IN + alpha ** 2 * v["P8"],
                      "<", group="inverse_bound"),
        LmiConstraint("P5_P6", lambda v: v["P5"] - v["P6"], "<", group="P5_P6"),
        LmiConstraint("M2hat(0)", lambda v: M2hat(v, 0.0), "<=", group="M2hat"),
        LmiConstraint("M2hat(T2)", lambda v: M2hat(v, T2), "<=", group="M2hat"),
        LmiConstraint("V_sym", lambda v: He(v["V"]), ">", group="conditioning"),
        LmiConstraint("Pi1_lower", lambda v: He(Pi1(v)) + 50.0 * P1bar(v), ">=", group="conditioning"),
        LmiConstraint("Pi1_upper", lambda v: He(Pi1(v)) + 0.2 * P1bar(v), "<=", group="conditioning"),
        LmiConstraint("positivity", positivity, ">", group="positivity"),
    ]
    meta = {"kind": "pre", "T2": float(T2), "alpha": float(alpha), "delta": float(delta),
            "m1_form": m1_form, "m_of_tau": M2hat}
    return LmiProblem(variables, cons, meta)


def assemble_analysis_lmis(Abb, Bbb, Jbb, H, T2, delta) -> LmiProblem:
    """Stability inequalities for a fixed pre-processing loop.

    The controller enters only through the closed-loop matrices, so the
    inequalities are linear in ``P1 ... P6`` and no inverse-bound
    linearization is needed.
    """
    _check_hyper(T2, delta=delta)
    Abb, Bbb, Jbb, H = (as_matrix(M, n) for M, n in ((Abb, "Abb"), (Bbb, "Bbb"), (Jbb, "Jbb"), (H, "H")))
    N, p = Abb.shape[0], H.shape[0]
    if Abb.shape != (N, N) or Bbb.shape != (N, p) or Jbb.shape != (p, N) or H.shape != (p, p):
        raise DimensionError("inconsistent closed-loop matrices")
    variables = [MatrixVariable("P1", (N, N), True), MatrixVariable("P2", (p, p), True),
                 MatrixVariable("P3", (N, N), True), MatrixVariable("P4", (N, N), True),
                 MatrixVariable("P5", (p, p), True), MatrixVariable("P6", (p, p), True)]

    def M1(v):
        P1 = v["P1"]
        return np.block([[He(P1 @ Abb) + v["P4"], P1 @ Bbb], [Bbb.T @ P1, -v["P5"]]])

    def M2(v, tau):
        s, b = _timer_weights(delta, tau)
        P2 = v["P2"]
        return np.block([[s * (He(P2 @ H) - delta * P2) + b * v["P6"], s * P2 @ Jbb],
                         [s * Jbb.T @ P2, -b * v["P3"]]])

    def positivity(v):
        from scipy.linalg import block_diag
        return block_diag(*(v[k] for k in ("P1", "P2", "P3", "P4", "P5", "P6")))

    cons = [
        LmiConstraint("P3_P4", lambda v: v["P3"] - v["P4"], "<", group="P3_P4"),
        LmiConstraint("P5_P6", lambda v: v["P5"] - v["P6"], "<", group="P5_P6"),
        LmiConstraint("M1", M1, "<=", group="M1"),
        LmiConstraint("M2(0)", lambda v: M2(v, 0.0), "<=", group="M2"),
        LmiConstraint("M2(T2)", lambda v: M2(v, T2), "<=", group="M2"),
        LmiConstraint("positivity", positivity, ">", group="positivity"),
    ]
    meta = {"kind": "analysis", "T2": float(T2), "delta": float(delta), "m_of_tau": M2}
    return LmiProblem(variables, cons, meta)


def post_m_of_tau(frakA, H2, delta, decay_rate=0.0):
    """Return ``f(values, tau)`` evaluating the observer flow matrix.

    With ``decay_rate > 0`` the term ``2 decay_rate blkdiag(Pbar, e^{delta tau} Phat)``
    is added, so negativity certifies a decay rate of ``2 decay_rate`` for the
    observer Lyapunov function.
    """
    def M(v, tau):
        s, b = _timer_weights(delta, tau)
        Pb, Ph, Jb, Jh = v["Pbar"], v["Phat"], v["Jbar"], v["Jhat"]
        top = b * He(Pb @ frakA - Jb @ H2)
        off = -b * Jb + s * (Jh @ H2 - Ph @ H2 @ frakA).T
        out = np.block([[top, off], [off.T, s * (He(Jh) - delta * Ph)]])
        if decay_rate:
            n = Pb.shape[0]
            out[:n, :n] += 2.0 * decay_rate * b * Pb
            out[n:, n:] += 2.0 * decay_rate * s * Ph
        return out
    return M


def assemble_post_lmis(frakA, H2, T2, delta, decay_rate=0.0) -> LmiProblem:
    """Observer design inequalities at ``tau = 0`` and ``tau = T2``.

    The off-diagonal block is ``-Jbar + e^{delta tau} (Jhat H2 - Phat H2 A)^T``,
    i.e. the derivative of ``chi2^T Phat chi2`` along the error flow.  For a
    scalar measured output it coincides with the transposed ``H2^T Jhat`` form.

    ``decay_rate = 0`` gives the plain pair of inequalities.  A positive value
    tightens both by ``2 decay_rate blkdiag(Pbar, e^{delta tau} Phat)``; any
    solution of the tightened pair also solves the plain one.
    """
    _check_hyper(T2, delta=delta)
    if not (np.isfinite(decay_rate) and decay_rate >= 0):
        raise ValueError("decay_rate must be nonnegative")
    frakA = as_matrix(frakA, "frakA")
    H2 = as_matrix(H2, "H2")
    n, p = frakA.shape[0], H2.shape[0]
    if frakA.shape != (n, n) or H2.shape != (p, n):
        raise DimensionError("frakA must be square and H2 must have matching columns")
    variables = [MatrixVariable("Pbar", (n, n), True), MatrixVariable("Phat", (p, p), True),
                 MatrixVariable("Jbar", (n, p)), MatrixVariable("Jhat", (p, p))]
    M = post_m_of_tau(frakA, H2, delta, decay_rate)
    cons = [
        LmiConstraint("M(0)", lambda v: M(v, 0.0), "<", group="M"),
        LmiConstraint("M(T2)", lambda v: M(v, T2), "<", group="M"),
        LmiConstraint("Pbar", lambda v: v["Pbar"], ">", group="positivity"),
        LmiConstraint("Phat", lambda v: v["Phat"], ">", group="positivity"),
    ]
    meta = {"kind": "post", "T2": float(T2), "delta": float(delta),
            "decay_rate": float(decay_rate), "m_of_tau": M}
    return LmiProblem(variables, cons, meta)


def assemble_observer_analysis_lmis(frakA, H2, Q, W, T2, delta) -> LmiProblem:
    """Observer inequalities with the gains ``(Q, W)`` fixed.

    Unknowns are ``Pbar`` and ``Phat``; the flow matrix is
    ``He(blkdiag(Pbar, s Phat) h) - blkdiag(0, delta s Phat)`` with
    ``s = exp(delta tau)`` and ``h`` the observer error dynamics.
    """
    _check_hyper(T2, delta=delta)
    frakA, H2, Q, W = (as_matrix(M, n) for M, n in
                       ((frakA, "frakA"), (H2, "H2"), (Q, "Q"), (W, "W")))
    n, p = frakA.shape[0], H2.shape[0]
    if frakA.shape != (n, n) or H2.shape != (p, n) or Q.shape != (n, p) or W.shape != (p, p):
        raise DimensionError("inconsistent observer dimensions")
    h = np.block([[frakA - Q @ H2, -Q], [W @ H2 - H2 @ (frakA - Q @ H2), W + H2 @ Q]])

    def M(v, tau):
        s, b = _timer_weights(delta, tau)
        P = np.block([[b * v["Pbar"], np.zeros((n, p))], [np.zeros((p, n)), s * v["Phat"]]])
        out = He(P @ h)
        out[n:, n:] -= delta * s * v["Phat"]
        return out

    variables = [MatrixVariable("Pbar", (n, n), True), MatrixVariable("Phat", (p, p), True)]
    cons = [
        LmiConstraint("M(0)", lambda v: M(v, 0.0), "<", group="M"),
        LmiConstraint("M(T2)", lambda v: M(v, T2), "<", group="M"),
        LmiConstraint("Pbar", lambda v: v["Pbar"], ">", group="positivity"),
        LmiConstraint("Phat", lambda v: v["Phat"], ">", group="positivity"),
    ]
    return LmiProblem(variables, cons, {"kind": "post-analysis", "T2": float(T2),
                                        "delta": float(delta), "m_of_tau": M})


# ---------------------------------------------------------------------------
# serialization (plain dicts of lists; the caller chooses the text format)
# ---------------------------------------------------------------------------

def _mat(M):
    return [[float(x) for x in row] for row in np.asarray(M)]


def _jsonable_meta(meta):
    return {k: v for k, v in meta.items() if isinstance(v, (int, float, str, bool))}


def problem_to_dict(problem: LmiProblem):
    """Coefficient form of every constraint, with named row-major matrices."""
    out = {"variables": [{"name": v.name, "shape": list(v.shape), "symmetric": v.symmetric}
                         for v in problem.variables],
           "constraints": [], "meta": _jsonable_meta(problem.meta)}
    names = []
    for v in problem.variables:
        if v.symmetric:
            names += [f"{v.name}[{i},{j}]" for i, j in zip(*np.triu_indices(v.shape[0]))]
        else:
            names += [f"{v.name}[{i},{j}]" for i in range(v.shape[0]) for j in range(v.shape[1])]
    for c in problem.constraints:
        F0, Fs = problem.coefficients(c)
        terms = [{"scalar": names[i], "index": i, "matrix": _mat(Fs[i])}
                 for i in range(len(Fs)) if np.any(Fs[i])]
        out["constraints"].append({"name": c.name, "group": c.group, "sense": c.sense,
                                   "gap": c.gap, "offset": _mat(F0), "terms": terms})
    return out


def problem_from_dict(d) -> LmiProblem:
    variables = [MatrixVariable(v["name"], tuple(v["shape"]), v["symmetric"]) for v in d["variables"]]
    cons = []
    for c in d["constraints"]:
        F0 = np.array(c["offset"], dtype=float)
        coeffs = {t["index"]: np.array(t["matrix"], dtype=float) for t in c["terms"]}
        cons.append(LmiConstraint(c["name"], _AffineMap(variables, F0, coeffs), c["sense"],
                                  c["gap"], c["group"]))
    return LmiProblem(variables, cons, d.get("meta"))


def assignment_to_dict(assignment: LmiAssignment):
    return {"values": {k: _mat(v) for k, v in assignment.values.items()},
            "margins": assignment.margins,
            "info": {k: v for k, v in assignment.info.items() if isinstance(v, (int, float, str))}}


def assignment_from_dict(problem: LmiProblem, d) -> LmiAssignment:
    return LmiAssignment(problem, {k: np.array(v, dtype=float) for k, v in d["values"].items()},
                         info=d.get("info", {}))
