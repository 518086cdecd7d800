"""Batch driver: config -> geometry -> constants -> simulation -> fits -> artifacts.

    python -m pmelab list-presets
    python -m pmelab run --config hyperbolic-thm21 --out results/hyp
    python -m pmelab run --config my_experiment.json --out results/x --strict
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from . import analysis as an
from . import elliptic_barriers as eb
from . import funcineq as fi
from . import geometry as geo
from . import pme_solver as pme

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_numlist = {"type": "array", "items": _num}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "scenario", "profile"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario": {"type": "string"},
        "description": {"type": "string"},
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "d"],
            "properties": {
                "family": {"enum": list(geo.FAMILIES)},
                "d": {"type": "integer", "minimum": 2},
                "k": _pos, "a": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "c1": _pos, "c2": _pos, "r_cap": _pos,
                "path": {"type": "string"},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"alpha": {"type": "number", "minimum": 0},
                           "beta": {"type": "number", "minimum": 0}},
        },
        "m": {"type": "number", "exclusiveMinimum": 1},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["indicator", "bump", "barenblatt", "elliptic", "barrier"]},
                "radius": _pos, "amplitude": _pos, "tau0": _pos, "C": _pos,
                "unit_mass": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "N": {"type": "integer", "minimum": 16},
                "R": {"oneOf": [_pos, {"const": "auto"}]},
                "grading": {"enum": ["uniform", "geometric"]},
                "t_final": _pos, "t_first": _pos,
                "n_out": {"type": "integer", "minimum": 2},
                "rtol": _pos,
            },
        },
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "poincare": {"type": "boolean"},
                "eigensolve": {"type": "boolean"},
                "sigma": _numlist,
                "sigma_grid": _numlist,
                "p_grid": _numlist,
                "r0_grid": _numlist,
                "witness_p": _num,
                "gamma_target": _num,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "q_list": _numlist,
                "window": {"oneOf": [{"type": "array", "items": _pos, "minItems": 2,
                                      "maxItems": 2}, {"const": "default"}]},
                "regime_a": _num,
                "expected_regime": {"type": "string"},
                "envelope_check": {"type": "boolean"},
                "envelope_tol": _pos,
                "barenblatt_check": {"type": "boolean"},
            },
        },
        "barrier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"},
                           "simulate": {"type": "boolean"},
                           "t_final": _pos, "N": {"type": "integer", "minimum": 16},
                           "R": _pos},
        },
        "elliptic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"enabled": {"type": "boolean"},
                           "N": {"type": "integer", "minimum": 16},
                           "R": _pos, "t_max": _pos, "flow": {"type": "boolean"}},
        },
    },
}

# documented defaults, merged under every config
DEFAULTS = {
    "weights": {"alpha": 0.0, "beta": 0.0},
    "m": 2.0,
    "initial": {"kind": "bump", "radius": 1.0, "unit_mass": True},
    "solver": {"enabled": True, "N": 600, "R": 12.0, "grading": "uniform", "t_final": 1e4,
               "t_first": 1e-2, "n_out": 61, "rtol": 1e-5},
    "constants": {"poincare": True, "eigensolve": False, "sigma": [], "sigma_grid": [],
                  "p_grid": [], "r0_grid": [], "witness_p": 1.5},
    "analysis": {"q_list": [1, 2, 4], "window": [1e2, 1e4], "regime_a": 0.5,
                 "envelope_check": False, "envelope_tol": 0.05, "barenblatt_check": False},
    "barrier": {"enabled": False, "simulate": True, "t_final": 1e10, "N": 400, "R": 15.0},
    "elliptic": {"enabled": False, "N": 400, "t_max": 1e4, "flow": True},
}

GAMMA_GRID = (1.0 + np.geomspace(1e-4, 0.2, 10)).tolist()

PRESETS = {
    "euclidean-barenblatt": {
        "description": "Solver validation against the d=3, m=2 Barenblatt solution",
        "profile": {"family": "euclidean", "d": 3},
        "initial": {"kind": "barenblatt", "tau0": 1.0, "C": 1.0, "unit_mass": False},
        "solver": {"N": 2000, "R": 12.0, "t_final": 20.0, "t_first": 0.1, "n_out": 40},
        "analysis": {"barenblatt_check": True, "window": [2.0, 20.0]},
    },
    "hyperbolic-thm21": {
        "description": "H^3, m=2: log-power 1/(m-1) decay and the explicit L^{q+1} envelope",
        "profile": {"family": "hyperbolic", "d": 3, "k": 1.0},
        "constants": {"eigensolve": True, "sigma": [1.0001, 1.5], "sigma_grid": GAMMA_GRID,
                      "gamma_target": 0.0},
        "analysis": {"envelope_check": True, "expected_regime": an.REGIME_HYPERBOLIC},
    },
    "intermediate-a05-prop34": {
        "description": "psi = e^{r^{1/2}}: gamma = (1-a)/a and log-power (2-a)/(a(m-1)) = 3",
        "profile": {"family": "intermediate", "d": 3, "a": 0.5, "c1": 1.0, "c2": 1.0},
        "solver": {"N": 800, "R": 20.0},
        "constants": {"poincare": True, "sigma_grid": GAMMA_GRID, "gamma_target": 1.0},
        "analysis": {"expected_regime": an.REGIME_INTERMEDIATE},
        "barrier": {"enabled": True},
    },
    "weighted-absolute-thm41": {
        "description": "H^3 with rho_nu = e^{-r/2}, rho_mu = e^{r/2}: absolute t^{-1/(m-1)} bound",
        "profile": {"family": "hyperbolic", "d": 3, "k": 1.0},
        "weights": {"alpha": 1.0, "beta": 1.0},
        "solver": {"N": 1200, "R": 30.0},
        "constants": {"sigma": [1.5], "p_grid": [1.1, 1.5, 1.9]},
        "analysis": {"expected_regime": an.REGIME_ABSOLUTE},
        "elliptic": {"enabled": True, "R": 10.0},
    },
    "subpoincare-failure-thm45": {
        "description": "No sub-Poincare inequality on unweighted H^3: criterion and cut-off witness",
        "profile": {"family": "hyperbolic", "d": 3, "k": 1.0},
        "solver": {"enabled": False},
        "constants": {"p_grid": [1.25, 1.5, 1.75], "r0_grid": [1, 3, 10, 30, 100]},
    },
    "constants-gamma-fit": {
        "description": "C_sigma ~ (sigma-1)^{-gamma} on psi = e^{r^{1/2}/(d-1)}, gamma = 1",
        "profile": {"family": "intermediate", "d": 3, "a": 0.5},
        "solver": {"enabled": False},
        "constants": {"poincare": True, "sigma_grid": GAMMA_GRID, "gamma_target": 1.0},
    },
}


# ---------------------------------------------------------------------------
# config handling


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(doc):
    """All schema violations, as readable strings."""
    v = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(doc), key=lambda e: list(e.path))
    return [f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errs]


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return {"schema_version": SCHEMA_VERSION, "scenario": name, **copy.deepcopy(PRESETS[name])}


def load_config(source):
    """Config from a JSON file path or a preset name, validated and merged with defaults."""
    if os.path.isfile(source):
        with open(source) as fh:
            doc = json.load(fh)
    elif source in PRESETS:
        doc = preset_config(source)
    else:
        raise ConfigError(f"{source!r} is neither a readable file nor a preset name")
    errors = validate_config(doc)
    if errors:
        raise ConfigError("config does not match the schema:\n  " + "\n  ".join(errors))
    return _merge({k: v for k, v in DEFAULTS.items()}, doc)


def build_profile(cfg):
    p = cfg["profile"]
    fam, d = p["family"], p["d"]
    if fam == "euclidean":
        return geo.ManifoldProfile.euclidean(d)
    if fam == "hyperbolic":
        return geo.ManifoldProfile.hyperbolic(d, p.get("k", 1.0))
    if fam == "intermediate":
        if "a" not in p:
            raise ConfigError("intermediate profile needs 'a'")
        return geo.ManifoldProfile.intermediate(d, p["a"], p.get("c1", 1.0), p.get("c2"),
                                                p.get("r_cap", 1.0))
    if "path" not in p:
        raise ConfigError("tabulated profile needs 'path'")
    return geo.ManifoldProfile.from_csv(d, p["path"])


def build_weights(cfg):
    w = cfg["weights"]
    return fi.WeightPair.exponential(w["alpha"], w["beta"], cfg["profile"]["d"])


# ---------------------------------------------------------------------------
# JSON helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def _report(M, W, operation, parameters, verdict, values, refinement_log=()):
    return {"profile": M.describe(), "weights": W.describe(), "operation": operation,
            "parameters": parameters, "verdict": verdict, "values": values,
            "refinement_log": list(refinement_log)}


# ---------------------------------------------------------------------------
# pipeline stages


def stage_geometry(cfg):
    M = build_profile(cfg)
    r_max = float(cfg["solver"]["R"]) if cfg["solver"]["R"] != "auto" else 50.0
    ch = geo.is_cartan_hadamard(M, r_max)
    rr = np.geomspace(1e-2, r_max, 12)
    rad, orth, mean = geo.curvatures(M, rr)
    table = [{"r": float(r), "S": float(geo.surface_area(M, r)), "V": geo.volume(M, r),
              "K_radial": float(a), "K_orthogonal": float(b), "mean_curvature": float(c)}
             for r, a, b, c in zip(rr, rad, orth, mean)]
    return {"profile": M.describe(), "cartan_hadamard": vars(ch),
            "lower_accuracy": M.lower_accuracy, "samples": table}


def stage_constants(cfg, executor=None):
    M, W = build_profile(cfg), build_weights(cfg)
    c = cfg["constants"]
    out = {"reports": [], "checks": {}}
    if c["poincare"]:
        est = fi.poincare_bracket(M, W, eigensolve=c["eigensolve"])
        out["poincare"] = {"has_gap": est.has_gap, "B": est.B, "lambda_low": est.lambda_low,
                           "lambda_high": est.lambda_high, "lambda_num": est.lambda_num}
        out["reports"].append(_report(M, W, "poincare_bracket", {"eigensolve": c["eigensolve"]},
                                      "gap" if est.has_gap else "no spectral gap",
                                      out["poincare"], est.refinement_log))
        if est.lambda_num is not None:
            out["checks"]["eigenvalue_above_lambda_low"] = est.lambda_num >= est.lambda_low
    for s in c["sigma"]:
        rep = fi.sobolev_constant(M, W, s)
        vals = {"C_sigma": rep.C_sigma, "x_star": rep.x_star,
                "growth_exponent": rep.growth_exponent, "stable": rep.stable,
                "flagged": rep.flagged, "message": rep.message}
        out["reports"].append(_report(M, W, "sobolev_constant", {"sigma": s}, rep.verdict, vals,
                                      rep.refinement_log))
        if rep.finite:
            out["checks"][f"sobolev_stable_sigma_{s:g}"] = rep.stable
    if c["sigma_grid"]:
        g = fi.fit_gamma(M, W, c["sigma_grid"], executor=executor)
        out["gamma_fit"] = vars(g)
        out["reports"].append(_report(M, W, "fit_gamma", {"sigma_grid": c["sigma_grid"]},
                                      "flagged" if g.flagged else "ok", vars(g)))
        if "gamma_target" in c:
            tgt = c["gamma_target"]
            out["gamma_fit"]["target"] = tgt
            ok = abs(g.gamma - tgt) <= 0.1 * tgt if tgt > 0 else g.indistinguishable_from_zero()
            out["checks"]["gamma_fit"] = ok
    for p in c["p_grid"]:
        rep = fi.subpoincare_criterion(M, W, p)
        vals = {"integral": rep.integral, "log_integral": rep.log_integral,
                "asymptotic_exponent": rep.asymptotic_exponent,
                "admissible_interval": rep.admissible_interval, "D_bracket": rep.D_bracket,
                "message": rep.message}
        out["reports"].append(_report(M, W, "subpoincare_criterion", {"p": p}, rep.verdict,
                                      vals, rep.refinement_log))
        if rep.admissible_interval is not None:
            lo, hi = rep.admissible_interval
            out["checks"][f"subpoincare_matches_threshold_p_{p:g}"] = rep.finite == (lo < p < hi)
        elif W.is_unweighted:
            out["checks"][f"subpoincare_divergent_p_{p:g}"] = not rep.finite
    if c["r0_grid"]:
        wit = [fi.cutoff_witness(M, c["witness_p"], r0) for r0 in c["r0_grid"]]
        ratios = [w.ratio for w in wit]
        out["cutoff_witness"] = [vars(w) for w in wit]
        out["reports"].append(_report(M, W, "cutoff_witness",
                                      {"p": c["witness_p"], "r0_grid": c["r0_grid"]},
                                      "increasing" if np.all(np.diff(ratios) > 0) else "not monotone",
                                      {"ratios": ratios}))
        out["checks"]["witness_increasing"] = bool(np.all(np.diff(ratios) > 0))
    return out


def _initial_datum(cfg, M, W):
    ini = dict(cfg["initial"])
    kind = ini["kind"]
    unit = ini.pop("unit_mass", True)
    if kind == "elliptic":
        R = float(cfg["solver"]["R"])
        spec = pme.ProblemSpec(M, cfg["m"], R, W)
        sol = eb.solve_sublinear(spec, N=cfg["solver"]["N"])
        ini = {"kind": "tabulated", "r": np.append(sol.r, R),
               "u": np.append(sol.W ** (1.0 / cfg["m"]), 0.0)}
    elif kind == "barrier":
        raise ConfigError("barrier initial data come from the barrier section")
    return ini, unit


def stage_simulate(cfg):
    M, W = build_profile(cfg), build_weights(cfg)
    s = cfg["solver"]
    ini, unit = _initial_datum(cfg, M, W)
    spec = pme.ProblemSpec(M, cfg["m"], 10.0, W, ini, unit)
    R = pme.auto_radius(spec, s["t_final"]) if s["R"] == "auto" else float(s["R"])
    spec = pme.ProblemSpec(M, cfg["m"], R, W, ini, unit)
    grid = pme.build_grid(spec, s["N"], s["grading"])
    times = pme.output_schedule(0.0, s["t_final"], s["n_out"], s["t_first"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traj = pme.simulate(grid, t_final=s["t_final"], output_times=times,
                            q_list=tuple(cfg["analysis"]["q_list"]), rtol=s["rtol"])
    return traj


def stage_fit(cfg, traj, Lambda_low=None):
    a = cfg["analysis"]
    m = cfg["m"]
    out = {"checks": {}}
    t = np.asarray(traj.t)
    sup = np.asarray(traj.sup_norm)
    out["mass_balance_error"] = traj.mass_balance_error()
    out["checks"]["mass_balance"] = out["mass_balance_error"] < 1e-10
    out["truncated"] = traj.truncated
    window = None if a["window"] == "default" else tuple(a["window"])
    if a["barenblatt_check"]:
        ini = cfg["initial"]
        tau0, C = ini.get("tau0", 1.0), ini.get("C", 1.0)
        d = cfg["profile"]["d"]
        lo, hi = window
        sel = (t >= lo) & (t <= hi)
        exact = pme.barenblatt(0.0, t[sel] + tau0, d, m, C)
        err = float(np.max(np.abs(sup[sel] / exact - 1)))
        slope = float(np.polyfit(np.log(t[sel] + tau0), np.log(sup[sel]), 1)[0])
        target = d / (d * (m - 1) + 2.0)
        out["barenblatt"] = {"max_rel_error": err, "exponent": -slope, "target": target}
        out["checks"]["barenblatt_sup"] = err < 0.02
        out["checks"]["barenblatt_exponent"] = abs(-slope - target) <= 0.03 * target
        return out
    try:
        fit = an.fit_decay(traj, m, window)
    except an.FitError as exc:
        out["fit_error"] = str(exc)
        out["checks"]["decay_fit"] = False
        return out
    out["decay_fit"] = vars(fit)
    regime, dist = an.classify_regime(fit.beta, m, a["regime_a"])
    out["regime"] = {"verdict": regime, "distance": dist,
                     "targets": an.regime_targets(m, a["regime_a"])}
    out["checks"]["decay_fit_accepted"] = fit.accepted
    if "expected_regime" in a:
        tgt = an.regime_targets(m, a["regime_a"])[a["expected_regime"]]
        out["checks"]["regime"] = regime == a["expected_regime"]
        out["checks"]["beta_within_0.3"] = abs(fit.beta - tgt) <= 0.3
    if a["envelope_check"] and Lambda_low:
        env = an.check_envelope_domination(traj, m, Lambda_low, tuple(a["q_list"]),
                                           tol=a["envelope_tol"])
        out["envelope_check"] = vars(env)
        out["checks"]["envelope_domination"] = env.verdict
    return out


def stage_barrier(cfg, executor=None):
    M = build_profile(cfg)
    b = cfg["barrier"]
    found = eb.barrier_lattice_search(M, M.params["a"], cfg["m"], executor=executor)
    out = {"n_admissible": len(found), "admissible": [vars(p) for p, _ in found],
           "checks": {"barrier_admissible_found": len(found) > 0}}
    if not found:
        return out, None
    p, rep = found[0]
    out["chosen"] = json.loads(rep.to_json())
    big = eb.barrier_residual(eb.BarrierParams(100 * p.C, p.eta, p.t0, p.a, p.m), M)
    out["checks"]["barrier_C_x100_rejected"] = not big.verdict
    # closed-form sup trajectory, fitted on a late log window
    T = np.exp(np.linspace(69.0, 138.0, 40))
    fit = an.fit_decay((T, eb.barrier_sup(p, T - p.t0)), p.m, (T[0], T[-1]))
    out["sup_fit_beta"] = fit.beta
    out["checks"]["barrier_sup_beta"] = abs(fit.beta - (2 - p.a) / (p.a * (p.m - 1))) < 1e-2
    if b["simulate"]:
        spec = pme.ProblemSpec(M, p.m, b["R"], initial=lambda r: eb.barrier_eval(p, r, 0.0))
        grid = pme.build_grid(spec, b["N"])
        times = np.geomspace(b["t_final"] * 1e-6, b["t_final"], 30)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tr = pme.simulate(grid, t_final=b["t_final"], output_times=times, q_list=(),
                              snapshot_times=times)
        worst = min(float(np.min(u - eb.barrier_eval(p, r, t)) / eb.barrier_sup(p, t))
                    for t, r, u in tr.snapshots[1:])
        out["comparison_margin"] = worst
        out["checks"]["barrier_comparison"] = worst >= -1e-3 and not tr.truncated
    return out, p


def stage_elliptic(cfg):
    M, W = build_profile(cfg), build_weights(cfg)
    e = cfg["elliptic"]
    R = float(e.get("R", cfg["solver"]["R"] if cfg["solver"]["R"] != "auto" else 10.0))
    spec = pme.ProblemSpec(M, cfg["m"], R, W, {"kind": "bump", "radius": 1.0}, True)
    sol = eb.solve_sublinear(spec, N=e["N"])
    out = {"R": R, "residual": sol.residual, "iterations": sol.iterations,
           "checks": {"elliptic_residual": sol.residual < 1e-8}}
    if e["flow"]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            flow = eb.minimal_solution_via_flow(spec, e["t_max"], grid=sol.grid)
        rel = float(np.max(np.abs(flow.W / sol.W - 1)))
        out["flow"] = {"monotonicity_margin": flow.monotonicity_margin, "max_rel_diff": rel}
        out["checks"]["flow_monotone"] = flow.monotonicity_margin >= -1e-6
        out["checks"]["flow_matches_elliptic"] = rel <= 0.02
    return out, sol


# ---------------------------------------------------------------------------
# commands


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_list_presets(args):
    for name, doc in PRESETS.items():
        print(f"{name:28s} {doc['description']}")
    return 0


def run_experiment(cfg, out, threads=1, stages=None):
    """Run the configured stages, write artifacts into ``out``; return the report dict."""
    _ensure_out(out)
    ex = ThreadPoolExecutor(threads) if threads and threads > 1 else None
    stages = stages or ("geometry", "constants", "simulate", "fit", "barrier", "elliptic")
    report = {"scenario": cfg["scenario"], "config": cfg, "checks": {}}
    try:
        if "geometry" in stages:
            g = stage_geometry(cfg)
            write_json(os.path.join(out, "geometry.json"), g)
            report["geometry"] = {"cartan_hadamard": g["cartan_hadamard"]["verdict"]}
        lam_low = None
        if "constants" in stages:
            c = stage_constants(cfg, ex)
            write_json(os.path.join(out, "constants.json"), c)
            report["constants"] = {k: v for k, v in c.items() if k not in ("reports", "checks")}
            report["checks"].update(c["checks"])
            lam_low = c.get("poincare", {}).get("lambda_low")
        if "simulate" in stages and cfg["solver"]["enabled"]:
            traj = stage_simulate(cfg)
            traj.to_csv(os.path.join(out, "trajectory.csv"))
            if "fit" in stages:
                f = stage_fit(cfg, traj, lam_low)
                write_json(os.path.join(out, "fit.json"), f)
                report["fit"] = {k: v for k, v in f.items() if k != "checks"}
                report["checks"].update(f["checks"])
        if "barrier" in stages and cfg["barrier"]["enabled"]:
            b, _ = stage_barrier(cfg, ex)
            write_json(os.path.join(out, "barrier.json"), b)
            report["barrier"] = {k: v for k, v in b.items() if k not in ("checks", "chosen")}
            report["checks"].update(b["checks"])
        if "elliptic" in stages and cfg["elliptic"]["enabled"]:
            e, sol = stage_elliptic(cfg)
            sol.to_csv(os.path.join(out, "elliptic.csv"))
            report["elliptic"] = {k: v for k, v in e.items() if k != "checks"}
            report["checks"].update(e["checks"])
    finally:
        if ex is not None:
            ex.shutdown()
    report["passed"] = all(report["checks"].values())
    write_json(os.path.join(out, "report.json"), report)
    return report


def _load(args):
    try:
        return load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _finish(args, checks):
    failed = [k for k, v in checks.items() if not v]
    for k in sorted(checks):
        print(f"{'PASS' if checks[k] else 'FAIL'}  {k}")
    return 1 if (args.strict and failed) else 0


def cmd_run(args):
    cfg = _load(args)
    rep = run_experiment(cfg, args.out, args.threads)
    return _finish(args, rep["checks"])


def cmd_geometry(args):
    cfg = _load(args)
    g = stage_geometry(cfg)
    write_json(os.path.join(_ensure_out(args.out), "geometry.json"), g)
    return _finish(args, {})


def cmd_constants(args):
    cfg = _load(args)
    ex = ThreadPoolExecutor(args.threads) if args.threads > 1 else None
    c = stage_constants(cfg, ex)
    write_json(os.path.join(_ensure_out(args.out), "constants.json"), c)
    return _finish(args, c["checks"])


def cmd_subpoincare(args):
    cfg = _load(args)
    cfg["constants"]["poincare"] = False
    cfg["constants"]["sigma"] = []
    cfg["constants"]["sigma_grid"] = []
    if args.p:
        cfg["constants"]["p_grid"] = args.p
    c = stage_constants(cfg)
    write_json(os.path.join(_ensure_out(args.out), "subpoincare.json"), c)
    return _finish(args, c["checks"])


def cmd_simulate(args):
    cfg = _load(args)
    traj = stage_simulate(cfg)
    traj.to_csv(os.path.join(_ensure_out(args.out), "trajectory.csv"))
    return _finish(args, {"mass_balance": traj.mass_balance_error() < 1e-10})


def _read_trajectory(path, q_list):
    data = np.genfromtxt(path, delimiter=",", names=True)
    tr = pme.SolveTrajectory(q_list=tuple(q_list))
    tr.t = data["t"].tolist()
    tr.sup_norm = data["sup_norm"].tolist()
    tr.mass = data["mass"].tolist()
    tr.qnorms = {q: data[f"norm_q{q:g}"].tolist() for q in q_list}
    tr.support_radius = data["support_radius"].tolist()
    tr.boundary_flux_cum = data["boundary_flux_cum"].tolist()
    tr.truncation_flag = [bool(x) for x in data["truncation_flag"]]
    tr.initial_mass = tr.mass[0]
    return tr


def cmd_fit(args):
    cfg = _load(args)
    path = args.trajectory or os.path.join(args.out, "trajectory.csv")
    traj = _read_trajectory(path, cfg["analysis"]["q_list"])
    lam = None
    if cfg["analysis"]["envelope_check"]:
        lam = fi.poincare_bracket(build_profile(cfg), build_weights(cfg)).lambda_low
    f = stage_fit(cfg, traj, lam)
    write_json(os.path.join(_ensure_out(args.out), "fit.json"), f)
    return _finish(args, f["checks"])


def cmd_barrier(args):
    cfg = _load(args)
    if cfg["profile"]["family"] != "intermediate":
        print("error: barrier-check needs an intermediate profile", file=sys.stderr)
        return 2
    b, _ = stage_barrier(cfg)
    write_json(os.path.join(_ensure_out(args.out), "barrier.json"), b)
    return _finish(args, b["checks"])


def cmd_elliptic(args):
    cfg = _load(args)
    e, sol = stage_elliptic(cfg)
    out = _ensure_out(args.out)
    sol.to_csv(os.path.join(out, "elliptic.csv"))
    write_json(os.path.join(out, "elliptic.json"), e)
    return _finish(args, e["checks"])


def build_parser():
    ap = argparse.ArgumentParser(prog="pmelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True,
                           help="JSON config file or preset name (see list-presets)")
        p.add_argument("--out", default="pmelab_out", help="artifact directory")
        p.add_argument("--strict", action="store_true",
                       help="exit with status 1 when any check fails")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent sigma/lattice evaluations")
        return p

    common(sub.add_parser("run", help="full pipeline")).set_defaults(func=cmd_run)
    common(sub.add_parser("geometry", help="geometry.json")).set_defaults(func=cmd_geometry)
    common(sub.add_parser("constants", help="constants.json")).set_defaults(func=cmd_constants)
    common(sub.add_parser("simulate", help="trajectory.csv")).set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("fit", help="fit.json from a trajectory"))
    p.add_argument("--trajectory", help="trajectory CSV (default: OUT/trajectory.csv)")
    p.set_defaults(func=cmd_fit)
    common(sub.add_parser("barrier-check", help="barrier lattice search")).set_defaults(func=cmd_barrier)
    common(sub.add_parser("elliptic", help="sublinear elliptic solve")).set_defaults(func=cmd_elliptic)
    p = common(sub.add_parser("subpoincare", help="sub-Poincare criterion"))
    p.add_argument("--p", type=float, nargs="+", help="exponents to test")
    p.set_defaults(func=cmd_subpoincare)
    common(sub.add_parser("list-presets", help="available presets"), False).set_defaults(
        func=cmd_list_presets)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
