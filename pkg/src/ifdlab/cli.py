"""Command line front end: ``ifd-lab run | validate | schema``.

A scenario is a JSON document naming a grid, an environment, a list of
strategies and one run kind. ``run`` writes ``report.json`` plus CSV
artifacts into the output directory and exits with

    0  success
    2  invalid configuration (schema, expression or reference errors)
    3  numerical failure (non-convergence, blow-up, lost positivity)
    4  infeasible environment where an ideal free strategy was required
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, exprfield
from .bernoulli import (
    BernoulliError,
    CounterexampleError,
    InfeasibleEnvironmentError,
    check_feasibility,
    compute_Ktilde,
    define_ifd_profile,
    remark_d_counterexample,
    solve_M,
)
from .dynamics import NumericalFailure, find_periodic_orbit, run_competition
from .fitness import fitness_field, is_ifd, path_fitness_bounds, space_time_integral
from .floquet import alpha_sweep, invades, invasion_test
from .mesh import Environment, FieldError, Grid, PeriodicScalar, SpaceTimeField, sample, write_field_csv
from .strategy import (
    CompatibilityError,
    PathError,
    Strategy,
    construct_ifd_strategy,
    construct_pursuit_invader,
    extract_invasion_path,
    path_integral,
)

log = logging.getLogger("ifdlab")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4

RUN_KINDS = ("feasibility", "orbit", "competition", "invasion", "alpha_sweep", "remark_d")

DEFAULT_TOLERANCES = {
    "orbit_tol": 1e-9,
    "max_periods": 20000,
    "eps_feas": 1e-9,
    "eps_eig": 1e-8,
    "ifd_tol_analytic": 1e-6,
    "ifd_tol_simulated": 1e-2,
    "compat_tol": 1e-8,
}

DEFAULT_OPTIONS = {
    "feasibility": {},
    "orbit": {"strategies": [0], "initial_scale": 0.5},
    "competition": {"resident": 0, "invader": 1, "periods": 1000, "u0_scale": 0.5, "v0_scale": 0.5,
                    "stop_ratio": None},
    "invasion": {"resident": 0, "invader": 1, "alphas": None, "initial_scale": 0.5},
    "alpha_sweep": {"resident": 0, "mu": 1.0, "alphas": [1, 4, 16, 64, 256], "modes": 5, "delta_margin": None,
                    "initial_scale": 0.5},
    "remark_d": {"rho": "1 + 0.8*sin(2*pi*t/T)", "amplitude": None, "tol": 1e-3, "initial_scale": 0.5},
}

PURSUIT_DEFAULTS = {"alpha": 50.0, "modes": 5, "delta_margin": None, "mu": 1.0}

_EXPR = {"type": ["string", "number"]}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INDEX = {"type": "integer", "minimum": 0}
_ALPHAS = {"type": "array", "items": _POS, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ifd-lab scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "time", "run"],
    "properties": {
        "domain": {
            "type": "object", "additionalProperties": False, "required": ["L", "nx"],
            "properties": {"L": _POS, "nx": {"type": "integer", "minimum": 8}},
        },
        "time": {
            "type": "object", "additionalProperties": False, "required": ["T", "nt"],
            "properties": {"T": _POS, "nt": {"type": "integer", "minimum": 8}},
        },
        "environment": {
            "type": "object", "additionalProperties": False, "required": ["r", "K"],
            "properties": {"r": _EXPR, "K": _EXPR},
        },
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "strategies": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["P"],
                "properties": {
                    "label": {"type": "string"},
                    "mu": _EXPR,
                    "P": {
                        "anyOf": [
                            _EXPR,
                            {
                                "type": "object", "additionalProperties": False, "required": ["pursuit"],
                                "properties": {
                                    "pursuit": {
                                        "type": "object", "additionalProperties": False,
                                        "properties": {
                                            "alpha": {"type": "number", "minimum": 0},
                                            "modes": {"type": "integer", "minimum": 1},
                                            "delta_margin": {"type": ["number", "null"], "minimum": 0},
                                            "mu": _POS,
                                        },
                                    }
                                },
                            },
                        ]
                    },
                },
            },
        },
        "run": {"enum": list(RUN_KINDS)},
        "options": {
            "type": "object",
            "properties": {
                "strategies": {"type": "array", "items": _INDEX, "minItems": 1},
                "resident": _INDEX,
                "invader": _INDEX,
                "periods": {"type": "integer", "minimum": 1},
                "u0_scale": {"type": "number", "minimum": 0},
                "v0_scale": {"type": "number", "minimum": 0},
                "initial_scale": _POS,
                "stop_ratio": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "alphas": {"anyOf": [_ALPHAS, {"type": "null"}]},
                "mu": _POS,
                "modes": {"type": "integer", "minimum": 1},
                "delta_margin": {"type": ["number", "null"], "minimum": 0},
                "rho": _EXPR,
                "amplitude": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
                "tol": _POS,
            },
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "orbit_tol": _POS,
                "max_periods": {"type": "integer", "minimum": 1},
                "eps_feas": {"type": "number", "minimum": 0},
                "eps_eig": {"type": "number", "minimum": 0},
                "ifd_tol_analytic": _POS,
                "ifd_tol_simulated": _POS,
                "compat_tol": _POS,
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
    "if": {"properties": {"run": {"const": "remark_d"}}},
    "then": {},
    "else": {"required": ["environment"]},
}


class ScenarioError(Exception):
    """A failure with an exit code, pipeline stage and diagnostics."""

    def __init__(self, code: int, stage: str, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.code = code
        self.stage = stage
        self.diagnostics = diagnostics or {}

    def to_json(self) -> dict:
        return {"stage": self.stage, "message": str(self), "diagnostics": _jsonable(self.diagnostics)}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- configuration ---------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise ScenarioError(EXIT_VALIDATION, "config", f"cannot read {path}: {err.strerror}")
    except json.JSONDecodeError as err:
        raise ScenarioError(EXIT_VALIDATION, "config", f"invalid JSON: {err.msg}",
                            {"line": err.lineno, "column": err.colno})


def _expr_source(v) -> str:
    return repr(float(v)) if isinstance(v, (int, float)) else v


def validate_config(cfg: dict) -> dict:
    """Schema and semantic validation; returns a normalized copy with defaults filled in."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ScenarioError(
            EXIT_VALIDATION, "validate", f"{_pointer(err.absolute_path)}: {err.message}",
            {"pointer": _pointer(err.absolute_path), "errors": len(errors)},
        )
    cfg = copy.deepcopy(cfg)
    kind = cfg["run"]
    cfg.setdefault("params", {})
    cfg.setdefault("strategies", [])
    opts = dict(DEFAULT_OPTIONS[kind])
    for key, value in cfg.get("options", {}).items():
        if key not in opts:
            raise ScenarioError(EXIT_VALIDATION, "validate",
                                f"/options/{key}: option not used by run kind {kind!r}",
                                {"pointer": f"/options/{key}", "allowed": sorted(opts)})
        opts[key] = value
    cfg["options"] = opts
    cfg["tolerances"] = {**DEFAULT_TOLERANCES, **cfg.get("tolerances", {})}
    cfg.setdefault("output", {})

    known = {"L", "T", *cfg["params"]}

    def check_expr(value, pointer):
        try:
            exprfield.parse(_expr_source(value), known)
        except exprfield.ExprError as err:
            raise ScenarioError(EXIT_VALIDATION, "validate", f"{pointer}: {err}",
                                {"pointer": pointer, "offset": getattr(err, "offset", None)})

    if "environment" in cfg:
        for key in ("r", "K"):
            check_expr(cfg["environment"][key], f"/environment/{key}")
    for n, s in enumerate(cfg["strategies"]):
        if isinstance(s["P"], dict):
            s["P"] = {"pursuit": {**PURSUIT_DEFAULTS, **s["P"]["pursuit"]}}
            if "mu" in s:
                raise ScenarioError(EXIT_VALIDATION, "validate",
                                    f"/strategies/{n}/mu: a pursuit strategy takes mu inside its pursuit block",
                                    {"pointer": f"/strategies/{n}/mu"})
        else:
            s.setdefault("mu", 1.0)
            check_expr(s["mu"], f"/strategies/{n}/mu")
            if s["P"] != "ifd":
                check_expr(s["P"], f"/strategies/{n}/P")

    n_strat = len(cfg["strategies"])

    def check_index(key, idx):
        if not 0 <= idx < n_strat:
            raise ScenarioError(EXIT_VALIDATION, "validate",
                                f"/options/{key}: strategy index {idx} out of range (have {n_strat})",
                                {"pointer": f"/options/{key}"})
        if kind != "invasion" or key != "invader":
            if isinstance(cfg["strategies"][idx]["P"], dict):
                raise ScenarioError(EXIT_VALIDATION, "validate",
                                    f"/options/{key}: a pursuit strategy can only be the invader of an invasion run",
                                    {"pointer": f"/options/{key}"})

    if kind == "orbit":
        for idx in opts["strategies"]:
            check_index("strategies", idx)
    elif kind in ("competition", "invasion"):
        check_index("resident", opts["resident"])
        check_index("invader", opts["invader"])
    elif kind == "alpha_sweep":
        check_index("resident", opts["resident"])
    elif kind == "remark_d":
        if not n_strat:
            raise ScenarioError(EXIT_VALIDATION, "validate", "/strategies: remark_d needs at least one strategy",
                                {"pointer": "/strategies"})
        for idx in range(n_strat):
            check_index("strategies", idx)
        check_expr(opts["rho"], "/options/rho")
    alphas = opts.get("alphas")
    if alphas:
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ScenarioError(EXIT_VALIDATION, "validate", "/options/alphas: must be strictly increasing",
                                {"pointer": "/options/alphas"})
    return cfg


# --- pipeline --------------------------------------------------------------


class Scenario:
    """Resolved inputs shared by every run kind."""

    def __init__(self, cfg: dict, jobs: int = 1):
        self.cfg = cfg
        self.jobs = max(1, jobs)
        self.tol = cfg["tolerances"]
        self.opts = cfg["options"]
        self.grid = Grid(cfg["domain"]["L"], cfg["domain"]["nx"], cfg["time"]["T"], cfg["time"]["nt"])
        self.params = dict(cfg["params"])
        self.env = None
        self._sol = None
        self.artifacts = {}

    def field(self, value, pointer, **kw) -> SpaceTimeField:
        try:
            return sample(_expr_source(value), self.grid, self.params, **kw)
        except exprfield.NonFiniteError as err:
            raise ScenarioError(EXIT_VALIDATION, "sample", f"{pointer}: {err}", {"pointer": pointer})
        except FieldError as err:
            raise ScenarioError(EXIT_VALIDATION, "sample", f"{pointer}: {err}", {"pointer": pointer})

    def build_environment(self) -> Environment:
        e = self.cfg["environment"]
        r = self.field(e["r"], "/environment/r", positive=True, name="r")
        K = self.field(e["K"], "/environment/K", positive=True, name="K")
        self.env = Environment(self.grid, r, K)
        return self.env

    @property
    def sol(self):
        if self._sol is None:
            self._sol = solve_M(self.env)
        return self._sol

    def strategy(self, idx: int) -> Strategy:
        spec = self.cfg["strategies"][idx]
        ptr = f"/strategies/{idx}"
        mu = self.field(spec["mu"], f"{ptr}/mu", name="mu")
        if mu.min() <= 0:
            raise ScenarioError(EXIT_VALIDATION, "strategy", f"{ptr}/mu: diffusion rate must be positive",
                                {"pointer": f"{ptr}/mu", "min": mu.min()})
        if spec["P"] == "ifd":
            s = construct_ifd_strategy(self.env, mu, self.sol, self.tol["eps_feas"], self.tol["compat_tol"])
        else:
            s = Strategy(mu, self.field(spec["P"], f"{ptr}/P", name="P"), f"strategy{idx}")
        label = spec.get("label") or (s.label if spec["P"] == "ifd" else f"strategy{idx}")
        return Strategy(s.mu, s.P, label, s.meta, s.P_faces)

    def initial(self, scale: float) -> np.ndarray:
        return scale * self.env.K.values[:, 0]

    def resident_orbit(self, idx: int):
        s = self.strategy(idx)
        orbit = find_periodic_orbit(self.env, [s], self.initial(self.opts["initial_scale"])[None],
                                    self.tol["orbit_tol"], self.tol["max_periods"])
        return s, orbit

    def add_field(self, name: str, f: SpaceTimeField) -> None:
        self.artifacts[name] = f

    def add_table(self, name: str, header, rows) -> None:
        self.artifacts[name] = (list(header), [list(r) for r in rows])


def _orbit_summary(orbit) -> dict:
    return {"defect": orbit.defect, "periods": orbit.periods, "positive": orbit.positive,
            "min": float(orbit.states.min()), "max": float(orbit.states.max())}


def _fitness_summary(sc: Scenario, ff, simulated: bool) -> dict:
    tol = sc.tol["ifd_tol_simulated" if simulated else "ifd_tol_analytic"]
    inf, sup = path_fitness_bounds(ff)
    return {"flatness": ff.flatness, "is_ifd": is_ifd(ff, tol), "ifd_tol": tol, "path_inf": inf,
            "path_sup": sup, "unweighted_integral": space_time_integral(ff)}


def _ifd_profile(sc: Scenario):
    """theta* = M K~ when the environment is feasible, else None."""
    rep = check_feasibility(sc.env, sc.sol, sc.tol["eps_feas"])
    if not rep.feasible:
        return None
    return define_ifd_profile(sc.sol, compute_Ktilde(sc.env, sc.sol))


def run_feasibility(sc: Scenario) -> dict:
    env = sc.build_environment()
    sol = sc.sol
    rep = check_feasibility(env, sol, sc.tol["eps_feas"])
    Kt = compute_Ktilde(env, sol)
    out = {"bernoulli": sol.to_json(), "feasibility": rep.to_json(),
           "Ktilde": {"min": Kt.min(), "mean_defect": float(np.abs(Kt.values.mean(axis=0) - 1.0).max())}}
    g = sc.grid
    sc.add_table("envelope.csv", ["t", "M", "logderiv", "a", "b"],
                 zip(g.t, sol.M.values, sol.logderiv.values, sol.a.values, sol.b.values))
    sc.add_field("margin.csv", SpaceTimeField(g, env.r.values - sol.logderiv.values[None, :]))
    sc.add_field("Ktilde.csv", Kt)
    if rep.feasible:
        theta = define_ifd_profile(sol, Kt)
        ff = fitness_field(env, theta)
        out["ifd_profile"] = _fitness_summary(sc, ff, simulated=False)
        sc.add_field("theta_star.csv", theta)
    return out


def run_orbit(sc: Scenario) -> dict:
    sc.build_environment()
    idx = sc.opts["strategies"]
    strategies = [sc.strategy(i) for i in idx]
    init = np.vstack([sc.initial(sc.opts["initial_scale"]) for _ in idx])
    orbit = find_periodic_orbit(sc.env, strategies, init, sc.tol["orbit_tol"], sc.tol["max_periods"])
    ff = fitness_field(sc.env, orbit.total())
    out = {"orbit": _orbit_summary(orbit), "labels": [s.label for s in strategies],
           "masses": [float(m) for m in orbit.states[:, :, 0].sum(axis=1) * sc.grid.h],
           "fitness": _fitness_summary(sc, ff, simulated=True)}
    theta = _ifd_profile(sc)
    if theta is not None:
        out["ifd_profile_error"] = float(np.abs(orbit.total().values - theta.values).max() / theta.max())
    for n in range(len(idx)):
        sc.add_field("orbit.csv" if n == 0 else f"orbit_{n}.csv", orbit.species(n))
    sc.add_field("fitness.csv", ff.F)
    return out


def run_competition_kind(sc: Scenario) -> dict:
    sc.build_environment()
    o = sc.opts
    su, sv = sc.strategy(o["resident"]), sc.strategy(o["invader"])
    traj = run_competition(sc.env, su, sv, sc.initial(o["u0_scale"]), sc.initial(o["v0_scale"]), o["periods"],
                           stop_ratio=o["stop_ratio"])
    m = traj.masses
    ran = m.shape[0] - 1
    tail = m[max(1, ran - ran // 10):, 1]
    out = {"labels": traj.labels, "periods_run": ran,
           "initial_mass": [float(v) for v in m[0]], "final_mass": [float(v) for v in m[-1]],
           "invader_ratio": float(m[-1, 1] / m[0, 1]) if m[0, 1] > 0 else None,
           "resident_ratio": float(m[-1, 0] / m[0, 0]) if m[0, 0] > 0 else None,
           "invader_late_monotone": bool(np.all(np.diff(tail) <= 0))}
    theta = _ifd_profile(sc)
    if theta is not None:
        u = traj.states[-1][0]
        out["survivor_ifd_error"] = float(np.abs(u - theta.values[:, 0]).max() / theta.max())
    sc.add_table("mass.csv", ["period", "species", "mass"],
                 ((p, n, f"{v:.17g}") for p, n, v in traj.mass_rows() if p > 0))
    return out


def _path_block(sc: Scenario, F, path) -> dict:
    g = sc.grid
    sc.add_table("path.csv", ["t", "gamma"], ((f"{t:.17g}", f"{x:.17g}") for t, x in zip(g.t, path.gamma)))
    return {"modes": path.modes, "delta_margin": path.delta_margin, "integral": path.integral,
            "raw_integral": path.raw_integral, "positive": bool(path.integral > 0)}


def _map(sc: Scenario, fn, items):
    if sc.jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=sc.jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def run_invasion(sc: Scenario) -> dict:
    sc.build_environment()
    o = sc.opts
    resident, orbit = sc.resident_orbit(o["resident"])
    ff = fitness_field(sc.env, orbit.total())
    sc.add_field("fitness.csv", ff.F)
    out = {"resident": resident.label, "orbit": _orbit_summary(orbit), "fitness": _fitness_summary(sc, ff, True)}
    spec = sc.cfg["strategies"][o["invader"]]
    eps = sc.tol["eps_eig"]
    if isinstance(spec["P"], dict):
        pur = spec["P"]["pursuit"]
        path = extract_invasion_path(ff, pur["modes"], pur["delta_margin"], require_positive=False)
        out["path"] = _path_block(sc, ff, path)
        bound = -path_integral(ff.F, path.gamma) / sc.grid.T
        alphas = o["alphas"] or [pur["alpha"]]

        def one(alpha):
            return alpha, invasion_test(sc.env, orbit, construct_pursuit_invader(path, alpha, pur["mu"]))

        results = _map(sc, one, alphas)
        sweep = [{"alpha": a, **r.to_json()} for a, r in results]
        sc.add_table("sweep.csv", ["alpha", "lambda1", "rho", "iters", "bound"],
                     ((f"{a:.17g}", f"{r.lambda1:.17g}", f"{r.rho:.17g}", r.iters, f"{bound:.17g}")
                      for a, r in results))
        lam = [r.lambda1 for _, r in results]
        out.update({"invader": f"pursuit(mu={pur['mu']:g})", "sweep": sweep, "bound": bound,
                    "lambda1_min": min(lam), "eigenfunction_positive": all(r.positive for _, r in results),
                    "invades": any(invades(r, eps) for _, r in results)})
    else:
        inv = sc.strategy(o["invader"])
        res = invasion_test(sc.env, orbit, inv)
        out.update({"invader": inv.label, "floquet": res.to_json(), "lambda1_min": res.lambda1,
                    "eigenfunction_positive": res.positive, "invades": invades(res, eps)})
    out["verdict"] = "invades" if out["invades"] else "no invasion"
    out["eps_eig"] = eps
    return out


def run_alpha_sweep(sc: Scenario) -> dict:
    sc.build_environment()
    o = sc.opts
    resident, orbit = sc.resident_orbit(o["resident"])
    ff = fitness_field(sc.env, orbit.total())
    sc.add_field("fitness.csv", ff.F)
    path = extract_invasion_path(ff, o["modes"], o["delta_margin"], require_positive=False)
    res = alpha_sweep(sc.env, orbit, path, o["mu"], o["alphas"], jobs=sc.jobs)
    sc.add_table("sweep.csv", ["alpha", "lambda1", "rho", "iters", "bound"],
                 ((f"{p.alpha:.17g}", f"{p.lambda1:.17g}", f"{p.rho:.17g}", p.iters, f"{res.bound:.17g}")
                  for p in res.points))
    return {"resident": resident.label, "orbit": _orbit_summary(orbit), "fitness": _fitness_summary(sc, ff, True),
            "path": _path_block(sc, ff, path), "bound": res.bound,
            "points": [{"alpha": p.alpha, "lambda1": p.lambda1, "rho": p.rho, "iters": p.iters,
                        "substeps": p.substeps} for p in res.points],
            "non_increasing": res.non_increasing(), "bound_holds": res.bound_holds()}


def run_remark_d(sc: Scenario) -> dict:
    o = sc.opts
    rho_f = sc.field(o["rho"], "/options/rho", name="rho")
    if np.ptp(rho_f.values, axis=0).max() > 0:
        raise ScenarioError(EXIT_VALIDATION, "validate", "/options/rho: rho must depend on t only",
                            {"pointer": "/options/rho"})
    rho = PeriodicScalar(sc.grid, rho_f.values[0], "rho")
    try:
        env, amp, profile = remark_d_counterexample(rho, o["amplitude"], o["tol"])
    except CounterexampleError as err:
        raise ScenarioError(EXIT_NUMERICAL, "remark_d", str(err),
                            {"margin_profile": err.margin_profile})
    sc.env = env
    rep = check_feasibility(env, sc.sol, sc.tol["eps_feas"])
    g = sc.grid
    sc.add_table("margin_profile.csv", ["t", "margin"], ((f"{t:.17g}", f"{v:.17g}") for t, v in zip(g.t, profile)))
    verdicts = []
    for idx in range(len(sc.cfg["strategies"])):
        entry = {"index": idx}
        try:
            s, orbit = sc.resident_orbit(idx)
        except InfeasibleEnvironmentError as err:
            entry.update({"label": "ifd", "constructed": False, "reason": str(err)})
            verdicts.append(entry)
            continue
        ff = fitness_field(env, orbit.total())
        summary = _fitness_summary(sc, ff, simulated=True)
        entry.update({"label": s.label, "constructed": True, "orbit": _orbit_summary(orbit), **summary,
                      "spread": summary["path_sup"] - summary["path_inf"]})
        sc.add_field(f"orbit_{idx}.csv", orbit.species(0))
        verdicts.append(entry)
    return {"amplitude": amp, "feasibility": rep.to_json(), "bernoulli": sc.sol.to_json(),
            "margin_profile": {"min": float(profile.min()), "max": float(profile.max())},
            "strategies": verdicts}


RUNNERS = {
    "feasibility": run_feasibility,
    "orbit": run_orbit,
    "competition": run_competition_kind,
    "invasion": run_invasion,
    "alpha_sweep": run_alpha_sweep,
    "remark_d": run_remark_d,
}


def run_scenario(cfg: dict, jobs: int = 1) -> tuple[dict, dict]:
    """Validate and execute; returns ``(report, artifacts)`` or raises ScenarioError."""
    cfg = validate_config(cfg)
    sc = Scenario(cfg, jobs)
    kind = cfg["run"]
    stage = kind
    try:
        results = RUNNERS[kind](sc)
    except ScenarioError:
        raise
    except InfeasibleEnvironmentError as err:
        diag = err.report.to_json() if err.report is not None else {}
        raise ScenarioError(EXIT_INFEASIBLE, stage, str(err), diag)
    except FieldError as err:
        raise ScenarioError(EXIT_VALIDATION, stage, str(err))
    except (NumericalFailure, BernoulliError, CompatibilityError, PathError, ArithmeticError) as err:
        diag = {}
        if getattr(err, "history", None) is not None:
            diag["defect_history_tail"] = np.asarray(err.history)[-10:]
        raise ScenarioError(EXIT_NUMERICAL, stage, f"{type(err).__name__}: {err}", diag)
    g = sc.grid
    report = {
        "ifdlab_version": __version__,
        "run": kind,
        "status": "ok",
        "grid": {"L": g.L, "nx": g.nx, "T": g.T, "nt": g.nt, "h": g.h, "tau": g.tau},
        "config": cfg,
        "defaults": {"tolerances": DEFAULT_TOLERANCES, "options": DEFAULT_OPTIONS[kind],
                     "pursuit": PURSUIT_DEFAULTS},
        "results": results,
    }
    return _jsonable(report), sc.artifacts


def emit_plot_data(artifacts: dict, outdir) -> list:
    """Write every field and table as a long-format CSV; returns the file names."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name in sorted(artifacts):
        item = artifacts[name]
        if isinstance(item, SpaceTimeField):
            write_field_csv(out / name, item)
        else:
            header, rows = item
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
        names.append(name)
    return names


def write_report(report: dict, outdir, timing: dict | None = None) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(report)
    if timing is not None:
        doc["timing"] = timing
    path = out / "report.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# --- entry point -----------------------------------------------------------


def _seed_grid(text: str):
    try:
        nx, nt = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected nx,nt")
    return nx, nt


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifd-lab", description="Ideal free dispersal scenarios")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: output.dir or ./out)")
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel eigenvalue solves")
    run.add_argument("--seed-grid", type=_seed_grid, metavar="NX,NT", help="override the grid size")
    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("config")
    sub.add_parser("schema", help="print the configuration JSON schema")
    return p


def _fail(err: ScenarioError, outdir=None) -> int:
    doc = {"status": "error", "exit_code": err.code, "error": err.to_json()}
    print(json.dumps(doc, indent=2, sort_keys=True), file=sys.stderr)
    if outdir is not None:
        write_report(doc, outdir)
    return err.code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "validate":
        try:
            cfg = validate_config(load_config(args.config))
        except ScenarioError as err:
            return _fail(err)
        print(json.dumps({"status": "valid", "run": cfg["run"]}, sort_keys=True))
        return EXIT_OK

    outdir = None
    try:
        cfg = load_config(args.config)
        if args.seed_grid:
            cfg.setdefault("domain", {})["nx"], cfg.setdefault("time", {})["nt"] = args.seed_grid
        outdir = args.out or (cfg.get("output") or {}).get("dir") or "out"
        t0 = time.perf_counter()
        report, artifacts = run_scenario(cfg, args.jobs)
        wall = time.perf_counter() - t0
    except ScenarioError as err:
        return _fail(err, outdir)
    names = emit_plot_data(artifacts, outdir)
    write_report(report, outdir, {"wall_seconds": wall, "jobs": args.jobs})
    log.info("wrote report.json and %d CSV files to %s", len(names), outdir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
