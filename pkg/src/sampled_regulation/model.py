"""Plant, exosystem and sampling models, plus the extended-plant assemblies.

Everything here is immutable after construction: matrices are copied into
read-only float arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DimensionError, SamplingError

__all__ = [
    "PlantModel", "Exosystem", "SamplingSpec", "ValidationReport",
    "ExtendedPlantPre", "AugmentedPost", "RegulatorPre", "RegulatorPost",
    "validate_plant", "check_neutral_stability", "generate_sampling_sequence",
    "check_sampling_sequence", "build_extended_plant_pre",
    "build_augmented_post", "pbh_margin", "SAMPLING_MODES",
]

SAMPLING_MODES = ("periodic", "uniform-random", "worst-case-max", "explicit-list")


def as_matrix(a, name="matrix", shape=None):
    """Return a read-only 2-D float copy of ``a``; reject non-finite entries."""
    m = np.array(a, dtype=float, copy=True)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        # a flat list is read as a row
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise DimensionError(f"{name} has shape {m.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


def _freeze(obj, names):
    for n in names:
        object.__setattr__(obj, n, as_matrix(getattr(obj, n), n))


@dataclass(frozen=True)
class PlantModel:
    """LTI plant ``x' = A_p x + B_p u + E_p w``, ``e_p = C_p x - F_p w``."""

    A_p: np.ndarray
    B_p: np.ndarray
    E_p: np.ndarray
    C_p: np.ndarray
    F_p: np.ndarray

    def __post_init__(self):
        _freeze(self, ("A_p", "B_p", "E_p", "C_p", "F_p"))
        n = self.A_p.shape[0]
        if self.A_p.shape != (n, n):
            raise DimensionError(f"A_p must be square, got {self.A_p.shape}")
        if self.B_p.shape[0] != n:
            raise DimensionError(f"B_p must have {n} rows, got {self.B_p.shape}")
        if self.E_p.shape[0] != n:
            raise DimensionError(f"E_p must have {n} rows, got {self.E_p.shape}")
        if self.C_p.shape[1] != n:
            raise DimensionError(f"C_p must have {n} columns, got {self.C_p.shape}")
        if self.F_p.shape != (self.C_p.shape[0], self.E_p.shape[1]):
            raise DimensionError(
                f"F_p must be {(self.C_p.shape[0], self.E_p.shape[1])}, got {self.F_p.shape}")

    @property
    def n_p(self):
        return self.A_p.shape[0]

    @property
    def m_p(self):
        return self.B_p.shape[1]

    @property
    def p(self):
        return self.C_p.shape[0]

    @property
    def q(self):
        return self.E_p.shape[1]


@dataclass(frozen=True)
class Exosystem:
    """Exogenous signal generator ``w' = S w``.

    Neutral stability is not enforced here; see :func:`check_neutral_stability`.
    """

    S: np.ndarray

    def __post_init__(self):
        _freeze(self, ("S",))
        if self.S.shape[0] != self.S.shape[1]:
            raise DimensionError(f"S must be square, got {self.S.shape}")

    @property
    def q(self):
        return self.S.shape[0]


@dataclass(frozen=True)
class SamplingSpec:
    """Sampling model: gaps between measurement instants lie in ``[T1, T2]``.

    ``periodic`` uses the gap ``period`` (defaults to ``T1``); ``worst-case-max``
    always waits the full ``T2``; ``uniform-random`` draws gaps uniformly in
    ``[T1, T2]`` from ``numpy.random.default_rng(seed)``.
    """

    T1: float
    T2: float
    mode: str = "uniform-random"
    seed: Optional[int] = None
    explicit_times: Optional[tuple] = None
    period: Optional[float] = None

    def __post_init__(self):
        T1, T2 = float(self.T1), float(self.T2)
        if not (math.isfinite(T1) and math.isfinite(T2)) or not (0.0 < T1 <= T2):
            raise SamplingError(f"need 0 < T1 <= T2, got T1={self.T1}, T2={self.T2}")
        object.__setattr__(self, "T1", T1)
        object.__setattr__(self, "T2", T2)
        if self.mode not in SAMPLING_MODES:
            raise SamplingError(f"unknown sampling mode {self.mode!r}; expected one of {SAMPLING_MODES}")
        if self.period is not None and not (T1 <= float(self.period) <= T2):
            raise SamplingError(f"period {self.period} outside [T1, T2]")
        if self.explicit_times is not None:
            times = tuple(float(t) for t in self.explicit_times)
            check_sampling_sequence(times, T1, T2, ulps=2)
            object.__setattr__(self, "explicit_times", times)
        elif self.mode == "explicit-list":
            raise SamplingError("mode 'explicit-list' requires explicit_times")


@dataclass(frozen=True)
class ValidationReport:
    stabilizable: bool
    detectable: bool
    stabilizability_margin: float
    detectability_margin: float
    tolerance: float

    @property
    def ok(self):
        return self.stabilizable and self.detectable


def _unstable_eigs(A, tol=1e-12):
    lam = np.linalg.eigvals(A) if A.size else np.array([])
    scale = 1.0 + (np.linalg.norm(A, 2) if A.size else 0.0)
    return lam[lam.real >= -tol * scale]


def pbh_margin(A, B, eigenvalues):
    """Smallest ``n``-th singular value of ``[A - lam I, B]`` over ``eigenvalues``.

    Returns ``inf`` when ``eigenvalues`` is empty.
    """
    n = A.shape[0]
    margin = math.inf
    for lam in eigenvalues:
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        margin = min(margin, s[n - 1] if len(s) >= n else 0.0)
    return float(margin)


def validate_plant(plant: PlantModel) -> ValidationReport:
    """PBH stabilizability of ``(A_p, B_p)`` and detectability of ``(A_p, C_p)``.

    Only eigenvalues of ``A_p`` with nonnegative real part are tested. A rank
    is declared full when the relevant singular value exceeds
    ``1e-8 * ||A_p||_2``.
    """
    A = np.asarray(plant.A_p)
    tol = 1e-8 * np.linalg.norm(A, 2)
    lam = _unstable_eigs(A)
    ms = pbh_margin(A, plant.B_p, lam)
    md = pbh_margin(A.T, plant.C_p.T, np.conj(lam))
    return ValidationReport(ms > tol, md > tol, ms, md, tol)


def _cluster(values, tol):
    """Group nearly equal complex numbers; returns list of (mean, count)."""
    groups = []
    for v in values:
        for g in groups:
            if abs(g[0] - v) <= tol:
                g[1].append(v)
                break
        else:
            groups.append([v, [v]])
    return [(complex(np.mean(g[1])), len(g[1])) for g in groups]


def distinct_eigenvalues(S, tol=None):
    """Distinct eigenvalues of ``S`` with algebraic multiplicities."""
    S = np.asarray(S, dtype=float)
    lam = np.linalg.eigvals(S)
    if tol is None:
        tol = 1e-6 * max(1.0, np.linalg.norm(S, 2))
    return _cluster(lam, tol)


def check_neutral_stability(S, tol_spec=1e-9):
    """Return ``(ok, spectrum)``.

    ``ok`` requires every eigenvalue on the imaginary axis (``|Re| <= tol_spec``)
    and semisimple: the geometric multiplicity, ``q - rank(S - lam I)`` with
    the rank decided at ``1e-9`` relative to the largest singular value, must
    equal the algebraic one.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise DimensionError("S must be square")
    q = S.shape[0]
    spectrum = np.linalg.eigvals(S)
    if np.any(np.abs(spectrum.real) > tol_spec):
        return False, spectrum
    for lam, alg in distinct_eigenvalues(S):
        M = S - lam * np.eye(q)
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > 1e-9 * max(s[0], 1e-300))) if s[0] > 0 else 0
        if q - rank != alg:
            return False, spectrum
    return True, spectrum


# -- sampling ----------------------------------------------------------------

def _ulp_slack(t, ulps):
    return ulps * math.ulp(t) if ulps else 0.0


def check_sampling_sequence(times, T1, T2, ulps=0):
    """Raise :class:`SamplingError` unless ``times`` satisfies the dwell bounds.

    Checks ``0 < t_1 <= T2`` and ``T1 <= t_{k+1} - t_k <= T2`` gap by gap. The
    differences are computed in floating point (exact by Sterbenz for adjacent
    instants); ``ulps`` widens the bounds by that many units in the last place
    of the later instant, which is needed when a grid such as 0.1, 0.2, 0.3 is
    not exactly representable.
    """
    prev = 0.0
    for k, t in enumerate(times):
        t = float(t)
        slack = _ulp_slack(t, ulps)
        if k == 0:
            if not (0.0 < t <= T2 + slack):
                raise SamplingError(f"first sampling instant {t} not in (0, T2={T2}]", index=0)
        else:
            gap = t - prev
            if not (T1 - slack <= gap <= T2 + slack):
                raise SamplingError(
                    f"gap {k} ({prev} -> {t}) = {gap!r} outside [{T1}, {T2}]", index=k)
        prev = t


def _place(prev, gap, T1, T2):
    # nudge the next instant by ulps until its float gap honours [T1, T2]
    t = prev + gap
    for _ in range(16):
        d = t - prev
        if d > T2:
            t = math.nextafter(t, -math.inf)
        elif d < T1:
            t = math.nextafter(t, math.inf)
        else:
            return t
    return t


def generate_sampling_sequence(spec: SamplingSpec, horizon: float) -> np.ndarray:
    """Sampling instants in ``(0, horizon]`` for ``spec``.

    The returned instants are strictly increasing, the first lies in
    ``(0, T2]`` and the next one (not returned) would exceed ``horizon``.
    Deterministic for a given ``(mode, seed)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    T1, T2 = spec.T1, spec.T2
    if spec.mode == "explicit-list":
        times = np.array([t for t in spec.explicit_times if t <= horizon])
        if len(spec.explicit_times) and spec.explicit_times[-1] + T2 < horizon:
            raise SamplingError(
                f"explicit list ends at {spec.explicit_times[-1]}, cannot cover horizon {horizon}")
        return times

    if spec.mode == "periodic":
        gap_fn = lambda: spec.period if spec.period is not None else T1  # noqa: E731
    elif spec.mode == "worst-case-max":
        gap_fn = lambda: T2  # noqa: E731
    else:
        rng = np.random.default_rng(spec.seed)
        gap_fn = lambda: rng.uniform(T1, T2)  # noqa: E731

    times = []
    prev = 0.0
    k = 0
    while True:
        if spec.mode == "periodic" and k > 0:
            # multiples of the period avoid drift from repeated addition
            t = (k + 1) * gap_fn()
            if not (T1 <= t - prev <= T2):
                t = _place(prev, gap_fn(), T1, T2)
        elif k == 0:
            t = gap_fn()
        else:
            t = _place(prev, gap_fn(), T1, T2)
        if t > horizon:
            break
        times.append(t)
        prev = t
        k += 1
    return np.array(times)


# -- interconnections --------------------------------------------------------

def _check_cols(M, cols, name):
    if M.shape[1] != cols:
        raise DimensionError(f"{name} must have {cols} columns, got {M.shape}")


def _check_rows(M, rows, name):
    if M.shape[0] != rows:
        raise DimensionError(f"{name} must have {rows} rows, got {M.shape}")


@dataclass(frozen=True)
class ExtendedPlantPre:
    """Plant plus internal model, seen from the stabilizer output ``v``.

    ``A = [[A_p, B_p K], [0, G1]]``, ``B = [0; G2]``, ``C = [C_p, 0]``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    n_p: int = field(default=0)

    def __post_init__(self):
        _freeze(self, ("A", "B", "C", "K", "G1", "G2"))
        if np.any(self.C @ self.B != 0.0):
            raise DimensionError("extended plant must satisfy C B = 0 exactly")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_z(self):
        return self.G1.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def n_v(self):
        return self.B.shape[1]


def build_extended_plant_pre(plant: PlantModel, G1, G2, K) -> ExtendedPlantPre:
    G1 = as_matrix(G1, "G1")
    G2 = as_matrix(G2, "G2")
    K = as_matrix(K, "K")
    n_p, n_z = plant.n_p, G1.shape[0]
    if G1.shape != (n_z, n_z):
        raise DimensionError("G1 must be square")
    _check_rows(G2, n_z, "G2")
    if K.shape != (plant.m_p, n_z):
        raise DimensionError(f"K must be {(plant.m_p, n_z)}, got {K.shape}")
    A = np.block([[plant.A_p, plant.B_p @ K], [np.zeros((n_z, n_p)), G1]])
    B = np.vstack([np.zeros((n_p, G2.shape[1])), G2])
    C = np.hstack([plant.C_p, np.zeros((plant.p, n_z))])
    return ExtendedPlantPre(A, B, C, K, G1, G2, n_p)


@dataclass(frozen=True)
class RegulatorPre:
    """Hybrid stabilizer ``(A_c, B_c, C_c, D_c)`` and holding device ``(H, E)``."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray
    H: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        _freeze(self, ("A_c", "B_c", "C_c", "D_c", "H", "E"))

    def check_against(self, ext: ExtendedPlantPre):
        n, p, nv = ext.n, ext.p, ext.n_v
        expected = {"A_c": (n, n), "B_c": (n, p), "C_c": (nv, n), "D_c": (nv, p),
                    "H": (p, p), "E": (p, n)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} must be {shape}, got {getattr(self, name).shape}")

    def as_dict(self):
        return {k: getattr(self, k) for k in ("A_c", "B_c", "C_c", "D_c", "H", "E")}


@dataclass(frozen=True)
class AugmentedPost:
    """Stabilizer-plant-internal-model interconnection used by the observer design.

    ``A_cl = [[A_p, B_p C_k], [0, A_k]]``, ``B_cl = [B_p D_k; B_k] K``,
    ``frakA = [[A_cl, B_cl], [0, G1]]``, ``frakBc = [0; G2]``,
    ``H2 = [C_p, 0, 0]`` and ``frakAc = frakA + frakBc H2``.
    """

    A_cl: np.ndarray
    B_cl: np.ndarray
    E_cl: np.ndarray
    H1: np.ndarray
    frakA: np.ndarray
    frakBc: np.ndarray
    frakAc: np.ndarray
    H2: np.ndarray

    @property
    def n_alpha(self):
        return self.frakA.shape[0]

    @property
    def p(self):
        return self.H2.shape[0]


def build_augmented_post(plant: PlantModel, A_k, B_k, C_k, D_k, K, G1, G2) -> AugmentedPost:
    A_k, B_k, C_k, D_k = (as_matrix(M, n) for M, n in
                          ((A_k, "A_k"), (B_k, "B_k"), (C_k, "C_k"), (D_k, "D_k")))
    K, G1, G2 = as_matrix(K, "K"), as_matrix(G1, "G1"), as_matrix(G2, "G2")
    n_p, n_k, n_z, p = plant.n_p, A_k.shape[0], G1.shape[0], plant.p
    if A_k.shape != (n_k, n_k):
        raise DimensionError("A_k must be square")
    _check_rows(B_k, n_k, "B_k")
    if C_k.shape != (plant.m_p, n_k):
        raise DimensionError(f"C_k must be {(plant.m_p, n_k)}, got {C_k.shape}")
    if D_k.shape != (plant.m_p, B_k.shape[1]):
        raise DimensionError(f"D_k must be {(plant.m_p, B_k.shape[1])}, got {D_k.shape}")
    if K.shape != (B_k.shape[1], n_z):
        raise DimensionError(f"K must be {(B_k.shape[1], n_z)}, got {K.shape}")
    if G2.shape != (n_z, p):
        raise DimensionError(f"G2 must be {(n_z, p)}, got {G2.shape}")
    A_cl = np.block([[plant.A_p, plant.B_p @ C_k], [np.zeros((n_k, n_p)), A_k]])
    B_cl = np.vstack([plant.B_p @ D_k, B_k]) @ K
    E_cl = np.vstack([plant.E_p, np.zeros((n_k, plant.q))])
    H1 = np.hstack([plant.C_p, np.zeros((p, n_k))])
    frakA = np.block([[A_cl, B_cl], [np.zeros((n_z, n_p + n_k)), G1]])
    frakBc = np.vstack([np.zeros((n_p + n_k, p)), G2])
    H2 = np.hstack([H1, np.zeros((p, n_z))])
    frakAc = frakA + frakBc @ H2
    mats = [as_matrix(M) for M in (A_cl, B_cl, E_cl, H1, frakA, frakBc, frakAc, H2)]
    return AugmentedPost(*mats)


@dataclass(frozen=True)
class RegulatorPost:
    """Continuous stabilizer, internal model and hybrid observer gains.

    The observer matrices are derived, never stored: see :meth:`observer`.
    """

    A_k: np.ndarray
    B_k: np.ndarray
    C_k: np.ndarray
    D_k: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        _freeze(self, ("A_k", "B_k", "C_k", "D_k", "G1", "G2", "K", "Q", "W"))

    def augmented(self, plant: PlantModel) -> AugmentedPost:
        return build_augmented_post(plant, self.A_k, self.B_k, self.C_k, self.D_k,
                                    self.K, self.G1, self.G2)

    def observer(self, plant: PlantModel):
        """Observer matrices ``T, L1, L2, H2, H`` as a dict."""
        aug = self.augmented(plant)
        n, p = aug.n_alpha, aug.p
        if self.Q.shape != (n, p) or self.W.shape != (p, p):
            raise DimensionError(f"Q must be {(n, p)} and W {(p, p)}")
        T = np.block([[aug.frakAc, self.Q], [np.zeros((p, n)), self.W]])
        L1 = np.block([[np.eye(n), np.zeros((n, p))], [-aug.H2, np.zeros((p, p))]])
        L2 = np.vstack([np.zeros((n, p)), np.eye(p)])
        H = np.hstack([aug.H2, np.zeros((p, p))])
        return {"T": T, "L1": L1, "L2": L2, "H2": aug.H2, "H": H}

    def as_dict(self):
        return {k: getattr(self, k) for k in ("A_k", "B_k", "C_k", "D_k", "G1", "G2", "K", "Q", "W")}
