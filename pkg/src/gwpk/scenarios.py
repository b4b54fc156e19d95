"""Scenario configs and task runners used by the command-line tool.

A config is a JSON object validated against :data:`CONFIG_SCHEMA` (unknown
keys are rejected) and merged over :data:`DEFAULTS`.  Each task writes its
artifacts into the output directory and returns a :class:`TaskResult` whose
``checks`` decide the exit status.
"""

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import jsonschema
import numpy as np

from . import analytic, gabor_matrix, io, kernels, plots
from .errors import ConfigError, GwpkError
from .field import GridSpec, gaussian_state, l2_norm, relative_l2
from .fio import caustic_check, construct_phase, fio_apply, phase_flow_comparability
from .hamiltonian import (
    REGISTRY,
    SymbolModel,
    get_symbol,
    integrate_flow_batch,
    phase_gradient_check,
    quadratic_symbol,
)
from .propagator import METHODS, STRANG, WEYL_MIDPOINT, PropagatorHandle, evolve, metaplectic_apply
from .tf import Lattice, Window, stft

SYMPLECTIC_TOL = 1e-7
PHASE_TOL = 1e-4
NORM_TOL = 1e-6
SPARSITY_MIN_EPS = 0.05
CONCENTRATION_MIN = 0.999
RESIDUAL_MAX = 1.0
FIO_TOL = 1e-4
SPREAD_MAX = 2.0

_num = {"type": "number"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_int_pair = {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2}
_axis = {"type": "array", "prefixItems": [_num, _num, {"type": "integer", "minimum": 4}], "minItems": 3, "maxItems": 3}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


CONFIG_SCHEMA = _obj({
    "symbol": {"oneOf": [
        {"type": "string"},
        _obj({"quadratic": {"type": "array", "items": _pair, "minItems": 2, "maxItems": 2},
              "name": {"type": "string"}}, required=["quadratic"]),
    ]},
    "grid": _obj({"n": {"type": "integer"}, "x_max": {"type": "number", "exclusiveMinimum": 0}}),
    "lattice": _obj({"extent": _pair, "nodes": _int_pair, "steps": _pair, "strict": {"type": "boolean"}}),
    "window": _obj({"kind": {"enum": ["gaussian", "hermite"]}, "order": {"type": "integer", "minimum": 0}}),
    "method": {"enum": [None, *METHODS]},
    "t_start": _num,
    "T": _num,
    "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "thresholds": _obj({
        "sparsify": {"type": "number", "minimum": 0},
        "decay_floor": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps_threshold": {"type": "number", "minimum": 0},
    }),
    "initial": _obj({"kind": {"enum": ["gaussian", "chirp-bump"]}, "center": _pair,
                     "width": {"type": "number", "exclusiveMinimum": 0}, "omega": _num,
                     "half_width": {"type": "number", "exclusiveMinimum": 0}}),
    "flow": _obj({"seeds": {"type": ["array", "null"], "items": _pair},
                  "steps": {"type": "integer", "minimum": 2}}),
    "energy": _obj({"eps0": {"type": "number", "exclusiveMinimum": 0},
                    "N_max": {"type": "integer", "minimum": 0, "maximum": analytic.MAX_ENERGY_ORDER},
                    "samples": {"type": "integer", "minimum": 2}}),
    "modspace": _obj({"p": {"enum": [1, 2, "inf"]},
                      "weight": _obj({"a": _num, "r": _num, "s": _num, "b": _num}),
                      "sparsity_eps": {"type": ["number", "null"]}}),
    "fio": _obj({"x_axis": _axis, "eta_axis": _axis, "sigma": _num}),
    "singularities": _obj({"signal": {"enum": ["chirp-bump", "initial"]}}),
    "full_report": _obj({"tasks": {"type": "array", "items": {"type": "string"}}}),
    "output": {"type": "string"},
})

DEFAULTS = {
    "symbol": "harmonic",
    "grid": {"n": 512, "x_max": 28.0},
    "lattice": {"extent": [12.0, 12.0], "nodes": [48, 48], "strict": True},
    "window": {"kind": "gaussian", "order": 1},
    "method": None,
    "t_start": 0.0,
    "T": 1.0,
    "dt": None,
    "thresholds": {"sparsify": 1e-8, "decay_floor": 1e-13, "delta": analytic.DEFAULT_DELTA,
                   "eps_threshold": analytic.DEFAULT_REGULAR_RATE},
    "initial": {"kind": "gaussian", "center": [0.5, 0.3], "width": 1.0, "omega": 2.0, "half_width": 3.0},
    "flow": {"seeds": None, "steps": 512},
    "energy": {"eps0": 0.3, "N_max": 6, "samples": 11},
    "modspace": {"p": 2, "weight": {"a": 2.0, "r": 0.0, "s": 0.0, "b": 1.0}, "sparsity_eps": None},
    "fio": {"x_axis": [-27.0, 27.0, 109], "eta_axis": [-16.0, 16.0, 65], "sigma": 1.0},
    "singularities": {"signal": "chirp-bump"},
    "full_report": {"tasks": ["flow", "evolve", "sparsity-fit", "energy", "modspace", "singularities"]},
    "output": "gwpk-out",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "symbol":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    """Validated config with the module objects it describes."""

    raw: dict
    symbol: SymbolModel
    grid: GridSpec
    lattice: Lattice
    window: Window
    handle: PropagatorHandle
    output: Path

    def initial_state(self, kind: Optional[str] = None):
        spec = self.raw["initial"]
        kind = kind or spec["kind"]
        if kind == "chirp-bump":
            return analytic.chirp_bump(self.grid, spec["omega"], spec["half_width"], spec["center"][0])
        return gaussian_state(self.grid, tuple(spec["center"]), spec["width"])


def load_config(source) -> ScenarioConfig:
    """Parse, validate and build a config from a path, JSON text or dict.

    Every failure (syntax, schema, module invariant) becomes :class:`ConfigError`.
    """
    try:
        if isinstance(source, dict):
            data = source
        else:
            text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
            data = json.loads(text)
        jsonschema.validate(data, CONFIG_SCHEMA)
        raw = _merge(DEFAULTS, data)
        return _build(raw)
    except ConfigError:
        raise
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {_short(exc)}") from exc


def _short(exc) -> str:
    if isinstance(exc, jsonschema.ValidationError):
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        return f"{where}: {exc.message}"
    return str(exc)


def _build(raw: dict) -> ScenarioConfig:
    sym = raw["symbol"]
    if isinstance(sym, dict):
        symbol = quadratic_symbol(np.array(sym["quadratic"], dtype=float), name=sym.get("name", "quadratic"))
    else:
        symbol = get_symbol(sym)
    grid = GridSpec(raw["grid"]["n"], float(raw["grid"]["x_max"]))
    lc = raw["lattice"]
    if "steps" in lc:
        lat = Lattice.from_steps(*lc["extent"], *lc["steps"], strict=lc["strict"])
    else:
        lat = Lattice.from_extents(*lc["extent"], *lc["nodes"], strict=lc["strict"])
    lat.check_grid(grid)
    wc = raw["window"]
    window = Window.gaussian(grid) if wc["kind"] == "gaussian" else Window.hermite(grid, wc["order"])
    method = raw["method"] or (STRANG if symbol.has_separable_split else WEYL_MIDPOINT)
    t0 = float(raw["t_start"])
    handle = PropagatorHandle(symbol, method, t0, t0 + float(raw["T"]), raw["dt"])
    return ScenarioConfig(raw, symbol, grid, lat, window, handle, Path(raw["output"]))


def list_scenarios(filter_text: str = "") -> list:
    """``(name, description)`` of built-in symbols whose name or text contains the filter."""
    needle = filter_text.lower()
    out = []
    for name in sorted(REGISTRY):
        desc = REGISTRY[name].description
        if needle in name.lower() or needle in desc.lower():
            out.append((name, desc))
    return out


# ---------------------------------------------------------------- tasks

@dataclass
class TaskResult:
    task: str
    metrics: dict
    checks: dict
    artifacts: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.checks.values())

    def record(self, cfg: ScenarioConfig) -> dict:
        return {
            "task": self.task,
            "symbol": cfg.symbol.name,
            "method": cfg.handle.method,
            "backend": kernels.BACKEND,
            "metrics": self.metrics,
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "diagnostics": self.diagnostics,
            "passed": self.passed,
            "artifacts": sorted(self.artifacts),
        }


def _rel(out: Path, p: Path) -> str:
    return str(Path(p).relative_to(out))


def _default_seeds():
    v = (-2.0, 0.0, 2.0)
    return np.array([[x, xi] for x in v for xi in v])


def task_flow(cfg: ScenarioConfig, out: Path) -> TaskResult:
    seeds = np.array(cfg.raw["flow"]["seeds"], float) if cfg.raw["flow"]["seeds"] else _default_seeds()
    h = cfg.handle
    batch = integrate_flow_batch(cfg.symbol, seeds, h.T, steps=cfg.raw["flow"]["steps"], t0=h.t_start)
    dets = np.linalg.det(batch.jac)
    sym_err = float(np.max(np.abs(dets - 1.0)))
    phase_err = max(phase_gradient_check(cfg.symbol, s, h.T)["max_relative_error"] for s in seeds[:3]) if h.T else 0.0
    path = out / "trajectory.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "t", "x", "xi", "psi", "det_jac"])
        for k, t in enumerate(batch.t_grid):
            for i in range(seeds.shape[0]):
                w.writerow([i, repr(float(t)), repr(float(batch.traj[k, i, 0])), repr(float(batch.traj[k, i, 1])),
                            repr(float(batch.psi[k, i])), repr(float(dets[k, i]))])
    arr = io.write_array(out / "trajectory.gwpk", batch.traj, {"axes": ["t", "seed", "coord"], "T": h.T})
    svg = plots.trajectories(batch.t_grid, batch.traj, out / "trajectories.svg", f"{cfg.symbol.name} flow")
    metrics = {
        "seeds": seeds.tolist(),
        "images": batch.traj[-1].tolist(),
        "max_det_deviation": sym_err,
        "max_phase_gradient_error": float(phase_err),
        "max_error_estimate": float(np.nanmax(batch.error_estimate)),
        "blown_up": int(np.count_nonzero(batch.blown_up)),
    }
    checks = {
        "symplectic": sym_err < SYMPLECTIC_TOL,
        "phase_identity": phase_err < PHASE_TOL,
        "no_blow_up": not np.any(batch.blown_up),
    }
    return TaskResult("flow", metrics, checks, [_rel(out, p) for p in (path, arr, svg)])


def task_evolve(cfg: ScenarioConfig, out: Path) -> TaskResult:
    u0 = cfg.initial_state()
    u = evolve(cfg.handle, u0)
    n0, n1 = l2_norm(u0), l2_norm(u)
    drift = abs(n1 - n0) / n0
    a0 = io.write_array(out / "u0.gwpk", u0.values, {"grid": {"n": cfg.grid.n, "x_max": cfg.grid.x_max}})
    a1 = io.write_array(out / "u.gwpk", u.values, {"grid": {"n": cfg.grid.n, "x_max": cfg.grid.x_max},
                                                   "handle": cfg.handle.meta()})
    s0 = plots.stft_heatmap(stft(u0, cfg.window, cfg.lattice), out / "stft_before.svg", "initial")
    s1 = plots.stft_heatmap(stft(u, cfg.window, cfg.lattice), out / "stft_after.svg", "evolved")
    metrics = {"norm_initial": n0, "norm_final": n1, "norm_drift": drift,
               "boundary_mass": float(u.boundary_mass()), "change": relative_l2(u, u0)}
    checks = {"norm_preserved": drift < NORM_TOL}
    if cfg.handle.T == 0:
        checks["identity_at_zero_time"] = bool(np.array_equal(u.values, u0.values))
    return TaskResult("evolve", metrics, checks, [_rel(out, p) for p in (a0, a1, s0, s1)])


def _assemble(cfg: ScenarioConfig, cache: dict):
    if "gabor" not in cache:
        cache["gabor"] = gabor_matrix.assemble(cfg.handle, cfg.window, cfg.lattice)
    return cache["gabor"]


def task_gabor_matrix(cfg: ScenarioConfig, out: Path, cache: Optional[dict] = None) -> TaskResult:
    cache = {} if cache is None else cache
    M = _assemble(cfg, cache)
    thr = cfg.raw["thresholds"]["sparsify"]
    Ms = gabor_matrix.sparsify(M, thr)
    trip = io.write_array(out / "gabor_triplets.gwpk", Ms.triplets(),
                          {"threshold": thr, "lattice": cfg.lattice.meta(), "T": cfg.handle.T})
    flags = io.write_array(out / "column_flags.gwpk", M.column_flags.astype(float))
    conc = gabor_matrix.mass_concentration(M)
    metrics = {"stats": M.stats, "concentration": conc, "threshold": thr, "nnz": Ms.stats["nnz"],
               "kept_fraction": Ms.stats["kept_fraction"], "dropped_mass": Ms.stats["dropped_mass"]}
    checks = {"finite": bool(np.all(np.isfinite(M.to_dense()))), "concentration": conc >= CONCENTRATION_MIN}
    return TaskResult("gabor-matrix", metrics, checks, [_rel(out, p) for p in (trip, flags)])


def task_sparsity_fit(cfg: ScenarioConfig, out: Path, cache: Optional[dict] = None) -> TaskResult:
    cache = {} if cache is None else cache
    M = _assemble(cfg, cache)
    fit = gabor_matrix.fit_sparsity(M, floor=cfg.raw["thresholds"]["decay_floor"])
    conc = gabor_matrix.mass_concentration(M)
    D = gabor_matrix._usable(M, True)
    dist = gabor_matrix.distance_table(M)
    amp = np.abs(D)
    keep = amp > fit.floor * amp.max()
    svg = plots.decay_scatter(dist[keep], np.log(amp[keep]), fit, out / "decay.svg",
                              f"{cfg.symbol.name}, T = {cfg.handle.T:g}")
    metrics = {"fit": fit.meta(), "eps": fit.rate, "C": float(np.exp(fit.log_amplitude)),
               "fit_residual": fit.fit_residual, "concentration": conc, "stats": M.stats}
    checks = {"positive_rate": fit.rate >= SPARSITY_MIN_EPS, "concentration": conc >= CONCENTRATION_MIN}
    diagnostics = {"residual_below_1": fit.fit_residual < RESIDUAL_MAX}
    return TaskResult("sparsity-fit", metrics, checks, [_rel(out, svg)], diagnostics)


def _axis(spec):
    return np.linspace(float(spec[0]), float(spec[1]), int(spec[2]))


def task_fio(cfg: ScenarioConfig, out: Path) -> TaskResult:
    fc = cfg.raw["fio"]
    h = cfg.handle
    if h.t_start != 0:
        raise ConfigError("fio task needs t_start = 0")
    phi = construct_phase(cfg.symbol, h.T, _axis(fc["x_axis"]), _axis(fc["eta_axis"]))
    f = cfg.initial_state()
    u = fio_apply(phi, fc["sigma"], f)
    comp = phase_flow_comparability(phi, cfg.symbol, h.T)
    probe = integrate_flow_batch(cfg.symbol, cfg.lattice.points(), h.T, store="final", estimate_error=False)
    metrics = {"phase": phi.meta(), "comparability": comp, "caustic_min_det": caustic_check(probe.jac)}
    checks = {"comparability_finite": bool(np.isfinite(comp["c1"]) and np.isfinite(comp["c2"]))}
    if cfg.symbol.is_quadratic:
        ref = metaplectic_apply(cfg.symbol, h.T, f, cfg.window, Lattice.from_steps(12, 12, 0.5))
        c = np.vdot(u.values, ref.values) / np.vdot(u.values, u.values)
        err = relative_l2(u * c, ref)
        metrics.update({"alignment_constant": {"re": float(c.real), "im": float(c.imag)},
                        "error_vs_metaplectic": err})
        checks["matches_metaplectic"] = err < FIO_TOL
    pa = io.write_array(out / "phase.gwpk", phi.values, {"x_axis": list(fc["x_axis"]), "eta_axis": list(fc["eta_axis"])})
    ua = io.write_array(out / "fio_output.gwpk", u.values, {"sigma": fc["sigma"]})
    return TaskResult("fio", metrics, checks, [_rel(out, p) for p in (pa, ua)])


def task_energy(cfg: ScenarioConfig, out: Path) -> TaskResult:
    ec = cfg.raw["energy"]
    h = cfg.handle
    u0 = cfg.initial_state()
    prof = analytic.energy_profile(u0, ec["eps0"], ec["N_max"])
    times = h.t_start + np.linspace(0.0, h.T, ec["samples"])
    rep = analytic.radius_track(h, u0, ec["eps0"], ec["N_max"], times)
    svg = plots.ratio_curves(rep.times, rep.ratios, out / "energy_ratios.svg", f"{cfg.symbol.name} energy ratios")
    arr = io.write_array(out / "energy_base.gwpk", rep.base, {"times": rep.times.tolist()})
    metrics = {"profile": prof.meta(), "radius": rep.meta()}
    first = min(range(rep.times.size), key=lambda i: abs(rep.times[i] - h.t_start))
    checks = {
        "initial_ratio_at_most_half": bool(np.all(rep.ratios[0.0][first] <= 0.5 + 1e-12)),
        "some_A_bounds_energy": rep.smallest_A is not None,
    }
    return TaskResult("energy", metrics, checks, [_rel(out, p) for p in (svg, arr)])


def task_modspace(cfg: ScenarioConfig, out: Path) -> TaskResult:
    mc = cfg.raw["modspace"]
    weight = analytic.WeightFunction(**mc["weight"])
    p = np.inf if mc["p"] == "inf" else mc["p"]
    rep = analytic.boundedness_check(cfg.handle, cfg.window, p, weight, cfg.lattice,
                                     sparsity_eps=mc["sparsity_eps"])
    metrics = {"weight": weight.meta(), "p": mc["p"], "boundedness": rep.meta()}
    checks = {"finite": bool(np.all(np.isfinite(rep.ratios))), "stable_across_probes": rep.spread < SPREAD_MAX}
    return TaskResult("modspace", metrics, checks)


def task_singularities(cfg: ScenarioConfig, out: Path) -> TaskResult:
    th = cfg.raw["thresholds"]
    kind = "chirp-bump" if cfg.raw["singularities"]["signal"] == "chirp-bump" else None
    f = cfg.initial_state(kind)
    rep = analytic.singularity_propagation_check(cfg.handle, f, cfg.window, cfg.lattice,
                                                 th["delta"], th["eps_threshold"])
    before = analytic.regular_region(f, cfg.window, th["eps_threshold"], cfg.lattice)
    after = analytic.regular_region(evolve(cfg.handle, f), cfg.window, th["eps_threshold"], cfg.lattice)
    paths = [plots.mask_png(before, out / "regular_before.png"), plots.mask_png(after, out / "regular_after.png"),
             plots.mask_pair(before, after, out / "regular_regions.svg", f"{cfg.symbol.name} regular regions"),
             io.write_array(out / "regular_masks.gwpk", np.stack([before.mask, after.mask]).astype(float))]
    checks = {"forward_inclusion": rep["forward_inclusion"]["fraction"] <= analytic.BOUNDARY_SLACK,
              "backward_inclusion": rep["backward_inclusion"]["fraction"] <= analytic.BOUNDARY_SLACK}
    return TaskResult("singularities", rep, checks, [_rel(out, p) for p in paths])


TASKS: dict = {
    "flow": task_flow,
    "evolve": task_evolve,
    "gabor-matrix": task_gabor_matrix,
    "sparsity-fit": task_sparsity_fit,
    "fio": task_fio,
    "energy": task_energy,
    "modspace": task_modspace,
    "singularities": task_singularities,
}
_SHARED_CACHE = ("gabor-matrix", "sparsity-fit")


def run_task(task: str, cfg: ScenarioConfig, out: Path, cache: Optional[dict] = None) -> TaskResult:
    fn: Callable = TASKS[task]
    out.mkdir(parents=True, exist_ok=True)
    if task in _SHARED_CACHE:
        return fn(cfg, out, cache)
    return fn(cfg, out)


def run_full_report(cfg: ScenarioConfig, out: Path, classify: Callable) -> tuple:
    """Run the configured task list into subdirectories; return ``(record, exit_code)``.

    A task that raises is recorded with its error and exit code; the report
    exit code is the largest one seen.
    """
    cache: dict = {}
    records, code = {}, 0
    for task in cfg.raw["full_report"]["tasks"]:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r} in full_report.tasks")
    for task in cfg.raw["full_report"]["tasks"]:
        sub = out / task
        try:
            res = run_task(task, cfg, sub, cache)
            rec = res.record(cfg)
            rec["artifacts"] = [f"{task}/{a}" for a in rec["artifacts"]]
            records[task] = rec
            code = max(code, 0 if res.passed else 1)
        except GwpkError as exc:
            c = classify(exc)
            records[task] = {"task": task, "error": error_record(exc, c)}
            code = max(code, c)
    return {"task": "full-report", "symbol": cfg.symbol.name, "backend": kernels.BACKEND,
            "tasks": records, "passed": code == 0}, code


def error_record(exc: BaseException, code: int) -> dict:
    return {"exit_code": code, "error_type": type(exc).__name__, "message": str(exc),
            "category": {1: "invariant", 2: "config", 3: "numerical"}.get(code, "unknown")}
