"""Command-line front end.

Usage::

    sampled-regulation synthesize --config run.yaml --out results/
    sampled-regulation simulate --config run.yaml --regulator results/regulator.json --out results/
    sampled-regulation verify --config run.yaml --regulator results/regulator.json [--out results/]
    sampled-regulation reproduce preproc --out run/ [--seed 7]

Exit codes: ``0`` success (certificate passes), ``1`` usage or input error,
``2`` infeasible design or failed certificate.

Configuration
-------------
A single YAML document.  Matrices are row-major lists of lists; vectors are
flat lists.  Unknown keys are rejected.  Annotated example::

    architecture: pre            # "pre" or "post"
    plant:                       # x' = A_p x + B_p u + E_p w,  e_p = C_p x - F_p w
      A_p: [[-2.0, 1.0], [0.0, -0.8]]
      B_p: [[0.0], [1.0]]
      E_p: [[1.0, 0.0], [0.0, 0.0]]
      C_p: [[10.0, 0.0]]
      F_p: [[0.0, 20.0]]
    exosystem:
      S: [[0.0, 1.0], [-1.0, 0.0]]   # w' = S w, neutrally stable
    sampling:
      T1: 0.1                    # minimum gap between samples
      T2: 0.3                    # maximum gap
      mode: uniform-random       # periodic | uniform-random | worst-case-max | explicit-list
      seed: 7                    # uniform-random only
      period: null               # periodic only (default T1)
      times: null                # explicit-list only
    hyperparams:
      alpha: 4.35                # pre only
      delta: 3.5
      copies: null               # pre: internal-model copies (default: number of outputs)
      n_v: null                  # pre: if given, must equal the number of outputs
      K: [[1.0, 0.0]]            # pre: internal-model gain (default: LQR design)
      m1_form: relaxed           # pre: "relaxed" or "congruence"
      decay_rate: 0.0            # post: tightening of the observer inequalities
    stabilizer:                  # post only
      A_k: ...                   # continuous stabilizer (A_k, B_k, C_k, D_k)
      B_k: ...
      C_k: ...
      D_k: ...
      K: ...                     # internal model to stabilizer gain
      G1: ...                    # internal model (default: built from S)
      G2: ...
    simulation:
      x0: null                   # original coordinates, without w (default zeros)
      w0: [1.0, 0.0]
      horizon: 30.0
      dt: 0.01                   # output step, at most T1 / 10
      delimiter: ","
    solver:
      backend: auto              # auto | cvxopt | clarabel | scs
      tol: 1.0e-7

Files
-----
``regulator.json`` holds the regulator matrices, the internal model, the
Lyapunov matrices of the certificate (or ``null``) and the hyperparameters.
Floats are written with ``repr`` and therefore reload bit-for-bit.  Every
JSON report carries a ``timestamp`` field; everything else is deterministic
given the config and seed.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import yaml

from .exceptions import (DimensionError, RegulationError, SamplingError, SynthesisError)
from .francis import build_internal_model, check_nonresonance
from .hybridsim import (arc_to_error, assemble_closed_loop_post, assemble_closed_loop_pre,
                        closed_loop_matrices_pre, extract_outputs, lyapunov_trace, simulate,
                        write_arc_csv)
from .instances import random_post_instance
from .lmi import assignment_to_dict
from .model import (Exosystem, PlantModel, RegulatorPost, RegulatorPre, SAMPLING_MODES, SamplingSpec,
                    as_matrix, build_augmented_post, build_extended_plant_pre,
                    generate_sampling_sequence)
from .synthesis import certify_post, certify_pre, synthesize_post, synthesize_pre
from .verify import (check_hurwitz, check_property1, lyapunov_monotonicity, regulation_metrics)

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
EXAMPLES = ("preproc", "postproc")
REGULATOR_FORMAT = "sampled-regulation-regulator"

_SECTIONS = {
    "architecture", "plant", "exosystem", "sampling", "hyperparams", "stabilizer",
    "simulation", "solver",
}
_KEYS = {
    "plant": {"A_p", "B_p", "E_p", "C_p", "F_p"},
    "exosystem": {"S"},
    "sampling": {"T1", "T2", "mode", "seed", "period", "times"},
    "hyperparams": {"alpha", "delta", "copies", "n_v", "K", "m1_form", "decay_rate"},
    "stabilizer": {"A_k", "B_k", "C_k", "D_k", "K", "G1", "G2"},
    "simulation": {"x0", "w0", "horizon", "dt", "delimiter"},
    "solver": {"backend", "tol"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    architecture: str
    plant: PlantModel
    S: np.ndarray
    sampling: SamplingSpec
    hyper: Dict = field(default_factory=dict)
    stabilizer: Optional[Dict[str, np.ndarray]] = None
    simulation: Dict = field(default_factory=dict)
    solver: Dict = field(default_factory=dict)
    raw: Dict = field(default_factory=dict)

    @property
    def T2(self):
        return self.sampling.T2


def _section(raw, name, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "section is missing")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    unknown = set(sec) - _KEYS[name]
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return sec


def _mat(sec, section, key, required=True):
    if sec.get(key) is None:
        if required:
            raise ConfigError(f"{section}.{key}", "is required")
        return None
    v = sec[key]
    if not (isinstance(v, list) and v and all(isinstance(r, list) for r in v)):
        raise ConfigError(f"{section}.{key}", "must be a nonempty list of rows")
    try:
        M = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", "rows must be numeric and of equal length") from None
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigError(f"{section}.{key}", "rows must be finite and of equal length")
    return M


def _vec(sec, section, key):
    v = sec.get(key)
    if v is None:
        return None
    try:
        x = np.array(v, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", "must be a list of numbers") from None
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"{section}.{key}", "must be finite")
    return x


def _num(sec, section, key, default=None, positive=False, integer=False):
    v = sec.get(key, default)
    if v is None:
        return None
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a dot ("1e-7") as strings
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key}", "must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"{section}.{key}", "must be an integer")
    if not math.isfinite(v) or (positive and not v > 0):
        raise ConfigError(f"{section}.{key}", "must be a positive finite number" if positive
                          else "must be finite")
    return int(v) if integer else float(v)


def parse_config(raw) -> RunConfig:
    """Validate a parsed YAML document; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    arch = raw.get("architecture")
    if arch not in ("pre", "post"):
        raise ConfigError("architecture", "must be 'pre' or 'post'")

    sec = _section(raw, "plant")
    mats = {k: _mat(sec, "plant", k) for k in ("A_p", "B_p", "E_p", "C_p", "F_p")}
    try:
        plant = PlantModel(**mats)
    except DimensionError as exc:
        raise ConfigError("plant", str(exc)) from None

    sec = _section(raw, "exosystem")
    S = _mat(sec, "exosystem", "S")
    try:
        Exosystem(S)
    except DimensionError as exc:
        raise ConfigError("exosystem.S", str(exc)) from None
    if S.shape[0] != plant.q:
        raise ConfigError("exosystem.S", f"must be {plant.q}x{plant.q} to match E_p and F_p")

    sec = _section(raw, "sampling")
    T1 = _num(sec, "sampling", "T1", positive=True)
    T2 = _num(sec, "sampling", "T2", positive=True)
    if T1 is None or T2 is None:
        raise ConfigError("sampling", "T1 and T2 are required")
    mode = sec.get("mode", "uniform-random")
    if mode not in SAMPLING_MODES:
        raise ConfigError("sampling.mode", f"must be one of {SAMPLING_MODES}")
    times = _vec(sec, "sampling", "times")
    try:
        spec = SamplingSpec(T1, T2, mode, seed=_num(sec, "sampling", "seed", integer=True),
                            explicit_times=None if times is None else tuple(times),
                            period=_num(sec, "sampling", "period", positive=True))
    except SamplingError as exc:
        raise ConfigError("sampling", str(exc)) from None

    sec = _section(raw, "hyperparams", required=False)
    hyper = {"delta": _num(sec, "hyperparams", "delta", 3.5 if arch == "pre" else 1.0, positive=True)}
    if arch == "pre":
        hyper["alpha"] = _num(sec, "hyperparams", "alpha", 4.35, positive=True)
        hyper["copies"] = _num(sec, "hyperparams", "copies", positive=True, integer=True)
        n_v = _num(sec, "hyperparams", "n_v", positive=True, integer=True)
        if n_v is not None and n_v != plant.p:
            raise ConfigError("hyperparams.n_v", f"must equal the number of outputs ({plant.p})")
        hyper["K"] = _mat(sec, "hyperparams", "K", required=False)
        m1 = sec.get("m1_form", "relaxed")
        if m1 not in ("relaxed", "congruence"):
            raise ConfigError("hyperparams.m1_form", "must be 'relaxed' or 'congruence'")
        hyper["m1_form"] = m1
        if "decay_rate" in sec:
            raise ConfigError("hyperparams.decay_rate", "applies to the post architecture only")
    else:
        for k in ("alpha", "copies", "n_v", "K", "m1_form"):
            if k in sec:
                raise ConfigError(f"hyperparams.{k}", "applies to the pre architecture only")
        rate = _num(sec, "hyperparams", "decay_rate", 0.0)
        if rate < 0:
            raise ConfigError("hyperparams.decay_rate", "must be nonnegative")
        hyper["decay_rate"] = rate

    stab = None
    if arch == "post":
        sec = _section(raw, "stabilizer")
        stab = {k: _mat(sec, "stabilizer", k, required=k != "G1")
                for k in ("A_k", "B_k", "C_k", "D_k", "K", "G1", "G2")}
        if stab["G1"] is None:
            stab["G1"] = build_internal_model(S, plant.p).G1
        try:
            build_augmented_post(plant, stab["A_k"], stab["B_k"], stab["C_k"], stab["D_k"],
                                 stab["K"], stab["G1"], stab["G2"])
        except DimensionError as exc:
            raise ConfigError("stabilizer", str(exc)) from None
    elif raw.get("stabilizer") is not None:
        raise ConfigError("stabilizer", "applies to the post architecture only")

    sec = _section(raw, "simulation", required=False)
    sim = {"x0": _vec(sec, "simulation", "x0"),
           "w0": _vec(sec, "simulation", "w0"),
           "horizon": _num(sec, "simulation", "horizon", 30.0, positive=True),
           "dt": _num(sec, "simulation", "dt", T1 / 10, positive=True),
           "delimiter": sec.get("delimiter", ",")}
    if sim["w0"] is None:
        sim["w0"] = np.zeros(plant.q)
    if sim["w0"].size != plant.q:
        raise ConfigError("simulation.w0", f"must have {plant.q} entries")
    if sim["dt"] > T1 / 10 * (1 + 1e-12):
        raise ConfigError("simulation.dt", f"must not exceed T1/10 = {T1 / 10}")
    if not (isinstance(sim["delimiter"], str) and len(sim["delimiter"]) == 1):
        raise ConfigError("simulation.delimiter", "must be a single character")

    sec = _section(raw, "solver", required=False)
    solver = {"backend": sec.get("backend", "auto"),
              "tol": _num(sec, "solver", "tol", 1e-7, positive=True)}
    if solver["backend"] not in ("auto", "cvxopt", "clarabel", "scs"):
        raise ConfigError("solver.backend", "must be auto, cvxopt, clarabel or scs")
    return RunConfig(arch, plant, S, spec, hyper, stab, sim, solver, raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return parse_config(raw)


def bundled_config_path(example):
    """Path of a bundled example configuration (``preproc`` or ``postproc``)."""
    return resources.files("sampled_regulation") / "data" / f"{example}_paper.yaml"


def bundled_reference_controller():
    """The bundled reference pre-processing controller as a regulator document."""
    p = resources.files("sampled_regulation") / "data" / "reference_controller_pre.json"
    return json.loads(p.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, doc, timestamp=True):
    body = dict(doc)
    if timestamp:
        body = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), **body}
    Path(path).write_text(json.dumps(_jsonable(body), indent=2) + "\n", encoding="utf-8")


def regulator_document(architecture, regulator, internal_model=None, lyapunov=None, hyperparams=None):
    """Regulator file contents (see module docstring)."""
    doc = {"format": REGULATOR_FORMAT, "version": 1, "architecture": architecture,
           "matrices": {k: np.asarray(v) for k, v in regulator.as_dict().items()}}
    if architecture == "pre":
        doc["internal_model"] = {k: np.asarray(v) for k, v in internal_model.items()}
    doc["lyapunov"] = None if lyapunov is None else {k: np.asarray(v) for k, v in lyapunov.items()}
    doc["hyperparams"] = dict(hyperparams or {})
    return _jsonable(doc)


class RegulatorFileError(ValueError):
    pass


def parse_regulator(doc):
    """``(architecture, regulator, internal_model, lyapunov, hyperparams)``."""
    if not isinstance(doc, dict) or doc.get("format") != REGULATOR_FORMAT:
        raise RegulatorFileError("not a regulator document")
    arch = doc.get("architecture")
    try:
        mats = {k: as_matrix(v, k) for k, v in doc["matrices"].items()}
        if arch == "pre":
            reg = RegulatorPre(**{k: mats[k] for k in ("A_c", "B_c", "C_c", "D_c", "H", "E")})
            im = {k: as_matrix(v, k) for k, v in doc["internal_model"].items()}
            if set(im) != {"G1", "G2", "K"}:
                raise RegulatorFileError("internal_model needs G1, G2 and K")
        elif arch == "post":
            reg = RegulatorPost(**{k: mats[k] for k in ("A_k", "B_k", "C_k", "D_k", "G1", "G2", "K",
                                                         "Q", "W")})
            im = None
        else:
            raise RegulatorFileError("architecture must be 'pre' or 'post'")
        lyap = doc.get("lyapunov")
        lyap = None if lyap is None else {k: as_matrix(v, k) for k, v in lyap.items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RegulatorFileError):
            raise
        raise RegulatorFileError(f"malformed regulator document: {exc!r}") from None
    return arch, reg, im, lyap, dict(doc.get("hyperparams", {}))


def load_regulator(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise RegulatorFileError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise RegulatorFileError(f"{path} is not valid JSON: {exc}") from None
    return parse_regulator(doc)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_synthesize(cfg: RunConfig, out) -> int:
    """Design, certify, and write ``report.json`` and ``regulator.json`` to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    h, sv = cfg.hyper, cfg.solver
    report = {"command": "synthesize", "architecture": cfg.architecture}
    try:
        if cfg.architecture == "pre":
            res = synthesize_pre(cfg.plant, cfg.S, cfg.sampling, copies=h["copies"], alpha=h["alpha"],
                                 delta=h["delta"], K=h["K"], m1_form=h["m1_form"], tol=sv["tol"],
                                 solver=sv["backend"])
            im = {"G1": res.ext.G1, "G2": res.ext.G2, "K": res.ext.K}
            lyap = res.analysis
            hyper = {**res.hyperparams, "m1_form": h["m1_form"]}
            report.update(route=res.route, factorization_residual=res.factorization_residual)
        else:
            st = cfg.stabilizer
            res = synthesize_post(cfg.plant, cfg.S, st["A_k"], st["B_k"], st["C_k"], st["D_k"], st["K"],
                                  st["G1"], st["G2"], cfg.T2, delta=h["delta"],
                                  decay_rate=h["decay_rate"], tol=sv["tol"], solver=sv["backend"])
            im, hyper = None, res.hyperparams
            lyap = {"Pbar": res.assignment["Pbar"], "Phat": res.assignment["Phat"]}
            report.update(hurwitz_margin=res.hurwitz_margin)
    except DimensionError as exc:
        _err(f"hyperparams: {exc}")
        return EXIT_USAGE
    except SynthesisError as exc:
        report.update(status="infeasible", message=str(exc), worst_margin=exc.worst_margin,
                      hyperparams=exc.hyperparams)
        write_json(out / "report.json", report)
        _err(f"{exc} (worst margin {exc.worst_margin}, hyperparameters {exc.hyperparams})")
        return EXIT_FAILED
    except RegulationError as exc:
        _err(str(exc))
        return EXIT_USAGE
    doc = regulator_document(cfg.architecture, res.regulator, im, lyap, hyper)
    report.update(status="pass" if res.certificate.overall else "fail", hyperparams=hyper,
                  certificate=res.certificate.as_dict(), regulator=doc["matrices"],
                  lyapunov=doc["lyapunov"], design=assignment_to_dict(res.assignment))
    if im is not None:
        report["internal_model"] = doc["internal_model"]
    write_json(out / "report.json", report)
    write_json(out / "regulator.json", doc, timestamp=False)
    print(res.certificate.summary())
    return EXIT_OK if res.certificate.overall else EXIT_FAILED


def _loop(cfg: RunConfig, arch, reg, im):
    if arch != cfg.architecture:
        raise DimensionError(f"regulator is for the {arch} architecture, config is {cfg.architecture}")
    if arch == "pre":
        ext = build_extended_plant_pre(cfg.plant, im["G1"], im["G2"], im["K"])
        reg.check_against(ext)
        return assemble_closed_loop_pre(cfg.plant, cfg.S, ext, reg), ext
    return assemble_closed_loop_post(cfg.plant, cfg.S, reg), None


def run_simulation(cfg: RunConfig, arch, reg, im, lyap=None, delta=None):
    """Simulate in original coordinates; ``(arc, metrics)``."""
    loop, _ = _loop(cfg, arch, reg, im)
    sysm = loop.physical_system()
    q = cfg.S.shape[0]
    sim = cfg.simulation
    x0 = np.zeros(sysm.dim - q) if sim["x0"] is None else sim["x0"]
    if x0.size != sysm.dim - q:
        raise DimensionError(f"simulation.x0 must have {sysm.dim - q} entries ({', '.join(sysm.labels[:-q])})")
    times = generate_sampling_sequence(cfg.sampling, sim["horizon"] + cfg.T2)
    arc = simulate(loop, x0, sim["w0"], times, sim["horizon"], sim["dt"], cfg.sampling,
                   coordinates="physical")
    out = extract_outputs(arc, loop)
    metrics = {"e_p": regulation_metrics(out["e_p"], arc.t).as_dict(),
               "n_jumps": int(len(arc.jump_indices)), "samples": int(len(arc.t))}
    if arch == "post":
        metrics["observer_error"] = regulation_metrics(out["ehat_p"] - out["e_p"], arc.t).as_dict()
    if lyap is not None and delta is not None:
        names = ("P1", "P2") if arch == "pre" else ("Pbar", "Phat")
        tr = lyapunov_trace(arc_to_error(arc, loop), lyap[names[0]], lyap[names[1]], delta)
        metrics["lyapunov"] = {"scale": tr.scale, "max_jump_increase": tr.max_jump_increase,
                               "max_flow_increase": tr.max_flow_increase,
                               "intervals_decreasing": tr.intervals_decreasing}
    return arc, metrics


def cmd_simulate(cfg: RunConfig, regulator, out) -> int:
    """Write ``arc.csv`` and ``metrics.json`` to ``out``; ``regulator`` is a parsed document."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    arch, reg, im, lyap, hyper = regulator
    try:
        arc, metrics = run_simulation(cfg, arch, reg, im, lyap, hyper.get("delta", cfg.hyper["delta"]))
    except (DimensionError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    write_arc_csv(arc, out / "arc.csv", delimiter=cfg.simulation["delimiter"])
    write_json(out / "metrics.json", {"command": "simulate", "architecture": arch, **metrics})
    m = metrics["e_p"]
    print(f"final |e_p| = {m['final_error']:.3e}, peak = {m['peak_error']:.3e}, "
          f"rate = {m['fitted_decay_rate']}")
    return EXIT_OK


def run_verify(cfg: RunConfig, regulator, resolve=False):
    """Certificate report and route for a parsed regulator document."""
    arch, reg, im, lyap, hyper = regulator
    delta = cfg.hyper["delta"]
    sv = cfg.solver
    loop, ext = _loop(cfg, arch, reg, im)
    if arch == "pre":
        if lyap is not None and not resolve:
            rep, route = check_property1(lyap, ext, reg, cfg.T2, delta), "stored"
        else:
            rep, lyap, route = certify_pre(ext, reg, cfg.T2, delta, tol=sv["tol"], solver=sv["backend"])
        ok, absc = check_hurwitz(closed_loop_matrices_pre(ext, reg)[0])
        rep.add("hurwitz(Abb)", ok, absc, 1e-9)
    else:
        rep, lyap, route = certify_post(cfg.plant, cfg.S, reg, cfg.T2, delta, P=lyap, tol=sv["tol"],
                                        solver=sv["backend"], resolve=resolve or lyap is None)
        if route == "given":
            route = "stored"
    return rep, route, lyap


def cmd_verify(cfg: RunConfig, regulator, out=None, resolve=False) -> int:
    try:
        rep, route, lyap = run_verify(cfg, regulator, resolve)
    except (DimensionError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"route: {route}")
    print(rep.summary())
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "verify.json", {"command": "verify", "architecture": regulator[0],
                                         "route": route, "certificate": rep.as_dict(),
                                         "lyapunov": lyap})
    return EXIT_OK if rep.overall else EXIT_FAILED


# ---------------------------------------------------------------------------
# reproduction runs
# ---------------------------------------------------------------------------

def _line(tag, ok, detail):
    print(f"[{tag}] {'PASS' if ok else 'FAIL'}  {detail}")
    return {"pass": bool(ok), "detail": detail}


def _decays(m, ratio=1e-2, rate=-0.05):
    r = m["fitted_decay_rate"]
    return m["normalized_final_error"] < ratio and r is not None and r < rate


def cmd_reproduce(example, out, seed=None) -> int:
    """Full pipeline for a bundled example; all outputs land in ``out``."""
    if example not in EXAMPLES:
        _err(f"unknown example {example!r}; valid ids: {', '.join(EXAMPLES)}")
        return EXIT_USAGE
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw = yaml.safe_load(bundled_config_path(example).read_text(encoding="utf-8"))
    if seed is not None:
        raw["sampling"]["seed"] = int(seed)
    seed = raw["sampling"].get("seed", 0) if seed is None else int(seed)
    (out / "config.yaml").write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
    cfg = parse_config(raw)

    code = cmd_synthesize(cfg, out)
    if code != EXIT_OK:
        return code
    regulator = load_regulator(out / "regulator.json")
    v_code = cmd_verify(cfg, regulator, out)
    s_code = cmd_simulate(cfg, regulator, out)
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    design = [c for c in report["certificate"]["checks"] if c["name"].startswith("design:")]
    summary = {}
    if example == "preproc":
        summary["A1"] = _line("A1", all(c["pass"] for c in design),
                              f"design inequalities feasible, smallest margin {min(abs(c['margin']) for c in design):.3e}")
        m = metrics["e_p"]
        summary["A2"] = _line("A2", _decays(m), f"final/peak {m['normalized_final_error']:.3e}, "
                              f"rate {m['fitted_decay_rate']}")
        ref = parse_regulator(bundled_reference_controller())
        rep, route, lyap = run_verify(cfg, ref, resolve=True)
        write_json(out / "reference_controller_verify.json",
                   {"route": route, "certificate": rep.as_dict(), "lyapunov": lyap})
        summary["A3"] = _line("A3", rep.overall and route == "analysis",
                              f"reference controller re-certified via {route}, smallest margin "
                              f"{min(abs(c.margin) for c in rep.checks):.3e}")
        loop, _ = _loop(cfg, "pre", ref[1], ref[2])
        ok, rows = lyapunov_monotonicity(loop, lyap["P1"], lyap["P2"], cfg.hyper["delta"], cfg.sampling,
                                         n_arcs=20, seed=seed)
        write_json(out / "lyapunov_monotonicity.json", {"pass": ok, "arcs": rows})
        summary["A4"] = _line("A4", ok, f"{sum(r['pass'] for r in rows)}/20 arcs monotone")
    else:
        observer = [c for c in report["certificate"]["checks"] if c["name"].startswith("observer:")]
        hur = [c for c in report["certificate"]["checks"] if c["name"] == "hurwitz(frakAc)"]
        summary["A5"] = _line("A5", all(c["pass"] for c in design + observer + hur),
                              f"observer inequalities feasible and certified, frakAc abscissa "
                              f"{hur[0]['margin']:.3e}")
        mo, me = metrics["observer_error"], metrics["e_p"]
        summary["A6"] = _line("A6", _decays(mo) and _decays(me),
                              f"observer error final/peak {mo['normalized_final_error']:.3e} rate "
                              f"{mo['fitted_decay_rate']}; e_p final/peak {me['normalized_final_error']:.3e} "
                              f"rate {me['fitted_decay_rate']}")
        rows = nonresonance_sweep(50, seed)
        write_json(out / "nonresonance.json", {"instances": rows})
        summary["A7"] = _line("A7", all(r["pass"] for r in rows),
                              f"{sum(r['pass'] for r in rows)}/50 random instances nonresonant")
    write_json(out / "summary.json", {"example": example, "seed": seed, "criteria": summary})
    ok = v_code == EXIT_OK and s_code == EXIT_OK and all(s["pass"] for s in summary.values())
    return EXIT_OK if ok else EXIT_FAILED


def nonresonance_sweep(n, seed):
    """Nonresonance test on ``n`` random post-processing instances with Hurwitz ``frakAc``."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        d = random_post_instance(rng)
        aug = build_augmented_post(d["plant"], d["A_k"], d["B_k"], d["C_k"], d["D_k"], d["K"],
                                   d["G1"], d["G2"])
        ok, margins = check_nonresonance(aug.A_cl, aug.B_cl, aug.H1, d["S"])
        rows.append({"instance": i, "n_p": d["plant"].n_p, "pass": ok,
                     "hurwitz_abscissa": check_hurwitz(aug.frakAc)[1],
                     "min_margin": min(margins.values())})
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="sampled-regulation",
                description="Output regulation under aperiodic sampling: synthesis, simulation, verification.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("synthesize", help="design and certify a regulator")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("simulate", help="simulate a regulator and export the arc")
    s.add_argument("--config", required=True)
    s.add_argument("--regulator", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("verify", help="check the certificate of a regulator")
    s.add_argument("--config", required=True)
    s.add_argument("--regulator", required=True)
    s.add_argument("--out", default=None, help="directory for verify.json")
    s.add_argument("--resolve", action="store_true",
                   help="ignore stored Lyapunov matrices and re-solve the analysis inequalities")
    s = sub.add_parser("reproduce", help="run a bundled example end to end")
    s.add_argument("example", help="one of: " + ", ".join(EXAMPLES))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args.example, args.out, args.seed)
        cfg = load_config(args.config)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, args.out)
        regulator = load_regulator(args.regulator)
        if args.command == "simulate":
            return cmd_simulate(cfg, regulator, args.out)
        return cmd_verify(cfg, regulator, args.out, args.resolve)
    except (ConfigError, RegulatorFileError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
