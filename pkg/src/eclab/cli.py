"""Scenario runner: ``eclab run | validate | formats``."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from eclab import kernels
from eclab.cohomology import AmbiguousSplitError, CohomologySpectrum, induced_action
from eclab.currents import (AtomCurrent, CurveCurrent, FormCurrent, FourierForm, PullbackSeries,
                            dump_current, pullback_curve, weak_distance)
from eclab.grid import FIELD_FORMAT, FormField, PeriodicGrid
from eclab.smear import SmearSpec, dual_pairing, smear_current, smear_form
from eclab.solver import (HypothesisError, NonConvergenceError, SolverConfig, eigencurrent,
                          expansion_diagnostic, gap_check, harmonic_section, holder_verify,
                          invariant_plane, positivity_check, transfer_oracle, uniqueness_test)
from eclab.torus_map import NotACoverError, TorusMap, nu, upsilon

EXPERIMENTS = ("eigencurrent", "invariant_plane", "measure_top_degree", "curve_preimages",
               "growth_rates", "smear_demo", "expansion_diagnostic", "uniqueness")

_pos = {"type": "number", "exclusiveMinimum": 0}
_mode = {"type": "object", "required": ["mode"], "additionalProperties": False,
         "properties": {"mode": {"type": "array", "items": {"type": "integer"}},
                        "cos": {"type": "number"}, "sin": {"type": "number"}}}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["map", "experiment"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "map": {
            "type": "object", "required": ["A"], "additionalProperties": False,
            "properties": {
                "A": {"type": "array", "minItems": 1, "maxItems": 2,
                      "items": {"type": "array", "items": {"type": "integer"}}},
                "perturbation": {"type": "array", "items": {
                    "type": "object", "required": ["coord", "freq"], "additionalProperties": False,
                    "properties": {"coord": {"type": "integer", "minimum": 0},
                                   "freq": {"type": "array", "items": {"type": "integer"}},
                                   "cos": {"type": "number"}, "sin": {"type": "number"}}}},
            },
        },
        "experiment": {"enum": list(EXPERIMENTS)},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"N": {"type": "integer", "minimum": 8}}},
        "solver": {"type": "object", "additionalProperties": False, "properties": {
            "tol_weak": _pos, "k_max": {"type": "integer", "minimum": 1},
            "min_iter": {"type": "integer", "minimum": 0},
            "F_test": {"type": "integer", "minimum": 0},
            "quad_oversample": {"type": "integer", "minimum": 1},
            "path": {"enum": ["form", "cover"]},
            "growth_J": {"type": "integer", "minimum": 1},
            "max_vertices": {"type": "integer", "minimum": 3}}},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "degree": {"type": "integer", "minimum": 1, "maximum": 2},
        "lambda": {"type": "number"},
        "class": {"type": "array", "items": {"type": "number"}},
        "threshold": _pos,
        "exact_modes": {"type": "array", "items": _mode},
        "test_functions": {"type": "integer", "minimum": 1},
        "bandwidth": {"type": "integer", "minimum": 1},
        "holder_N": {"type": "integer", "minimum": 64},
        "curve": {"type": "object", "additionalProperties": False, "properties": {
            "direction": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
            "offset": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            "vertices": {"type": "integer", "minimum": 3}}},
        "iterates": {"type": "integer", "minimum": 1},
        "J": {"type": "integer", "minimum": 1},
        "degrees": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "smear": {"type": "object", "required": ["box"], "additionalProperties": False, "properties": {
            "box": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                "minItems": 2, "maxItems": 2}},
            "rho_center": {"type": "array", "items": {"type": "number"}},
            "rho_radius": {"type": "array", "items": _pos},
            "panels": {"type": "integer", "minimum": 1},
            "steps_per_unit": {"type": "integer", "minimum": 1}}},
        "atom": {"type": "object", "required": ["point"], "additionalProperties": False,
                 "properties": {"point": {"type": "array", "items": {"type": "number"}},
                                "weight": {"type": "number"}}},
        "point": {"type": "array", "items": {"type": "number"}},
        "eps": _pos,
        "k_max": {"type": "integer", "minimum": 1},
    },
}

REQUIRED = {
    "eigencurrent": ["degree"],
    "invariant_plane": ["degree"],
    "uniqueness": ["degree"],
    "smear_demo": ["smear"],
    "expansion_diagnostic": ["point", "eps", "k_max"],
}


class ScenarioError(ValueError):
    pass


# ----------------------------------------------------------------------
# helpers

def load_scenario(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    validate_scenario(data)
    return data


def validate_scenario(data):
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from exc
    missing = [k for k in REQUIRED.get(data["experiment"], []) if k not in data]
    if missing:
        raise ScenarioError(f"experiment {data['experiment']} needs fields {missing}")
    A = data["map"]["A"]
    if any(len(row) != len(A) for row in A):
        raise ScenarioError("map matrix must be square")
    N = data.get("grid", {}).get("N")
    if N is not None and N & (N - 1):
        raise ScenarioError("grid N must be a power of two")
    try:
        TorusMap.from_spec(data["map"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return data


def scenario_hash(data):
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _round(x, digits=12):
    if isinstance(x, dict):
        return {str(k): _round(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v, digits) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return _round(x.tolist(), digits)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.{digits}g}")
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _config(data):
    return SolverConfig(**data.get("solver", {}))


def _grid(data, f, default=64):
    return PeriodicGrid(f.n, data.get("grid", {}).get("N", default))


def _leading_eigen(f, k, lam=None, w=None):
    M = induced_action(f.A, k).astype(float)
    if w is not None:
        w = np.asarray(w, dtype=float)
        if lam is None:
            lam = float(np.dot(M @ w, w) / np.dot(w, w))
        return float(lam), w
    vals, vecs = np.linalg.eig(M)
    real = np.abs(vals.imag) < 1e-12
    if lam is None:
        idx = [i for i in np.argsort(-np.abs(vals)) if real[i]]
        if not idx:
            raise ScenarioError("no real eigenvalue; use invariant_plane for complex pairs")
        i = idx[0]
    else:
        i = int(np.argmin(np.abs(vals - lam)))
        if abs(vals[i] - lam) > 1e-9 * max(1.0, abs(lam)):
            raise ScenarioError(f"lambda = {lam} is not an eigenvalue of the induced action")
    v = vecs[:, i].real
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return float(vals[i].real), v


def _exact_series(f, k, modes):
    """``d`` of the band-limited ``(k-1)``-form with the listed scalar modes."""
    if not modes:
        return None
    B = max(max(abs(c) for c in m["mode"]) for m in modes)
    u = FourierForm.zeros(f.n, k - 1, B)
    for m in modes:
        idx = tuple(np.array(m["mode"]) + B)
        nidx = tuple(-np.array(m["mode"]) + B)
        a, b = m.get("cos", 0.0), m.get("sin", 0.0)
        # a cos(2 pi m.x) + b sin(2 pi m.x), real Hermitian coefficients
        for c in range(u.ncomp):
            u.coefs[(c,) + idx] += 0.5 * (a - 1j * b)
            u.coefs[(c,) + nidx] += 0.5 * (a + 1j * b)
    return PullbackSeries(f, k - 1, {0: u})


def _random_tests(rng, n, count, B):
    grid = PeriodicGrid(n, 1 << max(4, int(np.ceil(np.log2(4 * B + 4)))))
    out = []
    for _ in range(count):
        u = FourierForm.zeros(n, 0, B)
        u.coefs[:] = rng.normal(size=u.coefs.shape) + 1j * rng.normal(size=u.coefs.shape)
        out.append(FourierForm.from_field(u.to_field(grid)))
    return out


def _trace_summary(trace, cfg):
    return {"iterations": trace.iterations,
            "final_weak_residual": trace.weak_residual[-1] if trace.iterations else None,
            "ratio_fit": trace.ratio_fit(cfg.burn_in), "predicted_ratio": trace.predicted_ratio,
            "converged": trace.converged}


# ----------------------------------------------------------------------
# experiments

def run_eigencurrent(data, f, out, jobs):
    cfg, grid, k = _config(data), _grid(data, f), data["degree"]
    lam, w = _leading_eigen(f, k, data.get("lambda"), data.get("class"))
    gap = gap_check(f, k, lam, cfg.path, cfg.growth_J)
    pot = _exact_series(f, k, data.get("exact_modes", []))
    C0 = FormCurrent(grid, k, harmonic=w, potential=pot, quad_oversample=cfg.quad_oversample)
    cfg.check_gap = False
    C, trace = eigencurrent(f, w, lam, C0, cfg)
    trace.gap, trace.predicted_ratio = gap, gap["predicted_ratio"]
    trace.to_csv(out / "trace.csv")
    dump_current(C, out / "fields", "eigencurrent")
    return {"lambda": lam, "class": w, "gap": gap, "trace": _trace_summary(trace, cfg),
            "fixed_point_residual": trace.weak_residual[-1]}


def run_invariant_plane(data, f, out, jobs):
    cfg, grid, k = _config(data), _grid(data, f), data["degree"]
    spec = CohomologySpectrum.of_map(f.A, k)
    W = spec.expanding(data.get("threshold", 1.0))
    if W.shape[1] == 0:
        raise ScenarioError("empty expanding subspace")
    plane = invariant_plane(f, W, cfg, grid, k)
    plane.trace.to_csv(out / "trace.csv")
    for i, C in enumerate(plane.currents):
        dump_current(C, out / "fields", f"kappa{i}")
    return {"spectrum": spec.report(data.get("threshold", 1.0)), "block": plane.block,
            "gap": plane.trace.gap, "trace": _trace_summary(plane.trace, cfg),
            "commutation_residual": plane.commutation_residual}


def run_measure_top_degree(data, f, out, jobs):
    cfg, grid = _config(data), _grid(data, f, 4096 if f.n == 1 else 64)
    k = f.n
    d = f.degree()
    gap = gap_check(f, k, d, cfg.path, cfg.growth_J)
    cfg.check_gap = False
    C0 = FormCurrent.from_density(FormField.constant(grid, k, [1.0]))
    C0 = FormCurrent(grid, k, harmonic=C0.class_vector(), quad_oversample=cfg.quad_oversample)
    C, trace = eigencurrent(f, C0.class_vector(), float(d), C0, cfg)
    trace.gap, trace.predicted_ratio = gap, gap["predicted_ratio"]
    trace.to_csv(out / "trace.csv")
    dump_current(C, out / "fields", "measure")
    summary = {"lambda": d, "gap": gap, "trace": _trace_summary(trace, cfg),
               "positivity": positivity_check(C).report()}
    if f.n == 1 and f.is_cover:
        rng = np.random.default_rng(data.get("seed", 0))
        tests = _random_tests(rng, 1, data.get("test_functions", 20), data.get("bandwidth", 6))
        oracle = transfer_oracle(f, tests)
        ec = np.array([C.pair(t) for t in tests])
        summary["oracle_max_difference"] = float(np.max(np.abs(oracle - ec)))
        deep, _ = eigencurrent(f, C0.class_vector(), float(d), C0,
                               SolverConfig(tol_weak=cfg.tol_weak, min_iter=40, check_gap=False,
                                            quad_oversample=cfg.quad_oversample))
        summary["holder"] = holder_verify(f, deep, float(d), N=data.get("holder_N", 8192)).report()
    return summary


def run_curve_preimages(data, f, out, jobs):
    if f.n != 2:
        raise ScenarioError("curve_preimages needs a map of T^2")
    cfg, grid = _config(data), _grid(data, f)
    spec = data.get("curve", {})
    Y = CurveCurrent.line(spec.get("direction", [0, 1]), spec.get("offset", [0.0, 0.0]),
                          spec.get("vertices", cfg.max_vertices))
    h = Y.cohomology_class()
    M = induced_action(f.A, 1).astype(float)
    W = CohomologySpectrum(1, M).expanding(1.0)
    plane = invariant_plane(f, W, cfg, grid, 1)
    target = plane.current_of_class(h)
    lam_block = plane.block
    if not np.allclose(lam_block, lam_block[0, 0] * np.eye(len(lam_block))):
        raise ScenarioError("curve rescaling needs a scalar action on H^1")
    lam = float(lam_block[0, 0])
    rows = []
    for j in range(data.get("iterates", 12) + 1):
        rows.append((j, len(Y.components), Y.vertex_count(), weak_distance(Y, target, cfg.F_test)))
        if j < data.get("iterates", 12):
            Y = pullback_curve(f, Y, max_vertices=cfg.max_vertices) / lam
    with open(out / "trace.csv", "w") as fh:
        fh.write("iterate,components,vertices,weak_distance\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]:.12g}\n")
    dump_current(Y, out / "fields", "preimage_curve")
    return {"class": h, "lambda": lam, "gap": plane.trace.gap,
            "weak_distance": [r[3] for r in rows], "final_weak_distance": rows[-1][3],
            "plane_commutation_residual": plane.commutation_residual}


def run_growth_rates(data, f, out, jobs):
    J = data.get("J", 20)
    degrees = data.get("degrees", list(range(f.n + 1)))
    res = {}
    for k in degrees:
        if k > f.n:
            raise ScenarioError(f"degree {k} exceeds dimension")
        u = upsilon(f, k, J)
        entry = {"upsilon": u.estimate, "upsilon_j": u.estimates}
        if f.is_cover:
            v = nu(f, k, J)
            entry.update(nu=v.estimate, nu_j=v.estimates)
        res[str(k)] = entry
    return {"J": J, "rates": res}


def run_smear_demo(data, f, out, jobs):
    spec = SmearSpec.from_dict(data["smear"])
    if spec.n != f.n:
        raise ScenarioError("smear box dimension differs from the map")
    grid = _grid(data, f, 256 if f.n == 1 else 128)
    rng = np.random.default_rng(data.get("seed", 0))
    phi = _random_tests(rng, f.n, 1, 4)[0].to_field(grid)
    from eclab.grid import exterior_derivative
    comm = float(np.max(np.abs(exterior_derivative(smear_form(spec, phi)).data
                                - smear_form(spec, exterior_derivative(phi)).data)))
    summary = {"commutation_residual": comm}
    atom = data.get("atom")
    if atom:
        A = AtomCurrent([atom["point"]], [atom.get("weight", 1.0)])
        S = smear_current(spec, A, grid)
        one = FormField.constant(grid, 0, [1.0])
        summary["atom_mass"] = S.pair(one)
        summary["duality_difference"] = abs(S.pair(phi) - dual_pairing(spec, A, phi))
        if isinstance(S, FormCurrent):
            dump_current(S, out / "fields", "smeared_atom")
    return summary


def run_expansion(data, f, out, jobs):
    diag = expansion_diagnostic(f, data["point"], data["eps"], data["k_max"])
    return diag.report()


def run_uniqueness(data, f, out, jobs):
    cfg, grid, k = _config(data), _grid(data, f), data["degree"]
    lam, w = _leading_eigen(f, k, data.get("lambda"), data.get("class"))
    gap = gap_check(f, k, lam, cfg.path, cfg.growth_J)
    cfg.check_gap = False
    modes = data.get("exact_modes") or [{"mode": [1] * f.n, "sin": 0.1}]
    C0 = FormCurrent(grid, k, harmonic=w, quad_oversample=cfg.quad_oversample)
    C1 = FormCurrent(grid, k, harmonic=w, potential=_exact_series(f, k, modes),
                     quad_oversample=cfg.quad_oversample)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        a, b = ex.submit(eigencurrent, f, w, lam, C0, cfg), ex.submit(eigencurrent, f, w, lam, C1, cfg)
        (A, ta), (B, tb) = a.result(), b.result()
    dist = weak_distance(A, B, cfg.F_test)
    return {"lambda": lam, "class": w, "gap": gap, "distance": dist,
            "iterations": [ta.iterations, tb.iterations]}


RUNNERS = {"eigencurrent": run_eigencurrent, "invariant_plane": run_invariant_plane,
           "measure_top_degree": run_measure_top_degree, "curve_preimages": run_curve_preimages,
           "growth_rates": run_growth_rates, "smear_demo": run_smear_demo,
           "expansion_diagnostic": run_expansion, "uniqueness": run_uniqueness}


# ----------------------------------------------------------------------
# entry points

def _write_summary(out, summary):
    text = json.dumps(_round(summary), indent=1, sort_keys=True) + "\n"
    (out / "summary.json").write_text(text)
    return text


def run(path, out=None, jobs=1, seed=None):
    """Run a scenario; returns ``(exit_code, summary)``."""
    try:
        data = load_scenario(path)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1, {"status": "invalid", "error": str(exc)}
    if seed is not None:
        data = dict(data, seed=seed)
    out = Path(out or data.get("output") or Path(path).with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    f = TorusMap.from_spec(data["map"])
    base = {"scenario": data.get("name", Path(path).stem), "scenario_hash": scenario_hash(data),
            "experiment": data["experiment"], "map": f.to_spec()}
    try:
        result = RUNNERS[data["experiment"]](data, f, out, jobs)
    except HypothesisError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        _write_summary(out, dict(base, status="rejected", error=str(exc),
                                 gap_margin=exc.margin, gap_threshold=exc.threshold))
        return 1, base
    except (ScenarioError, AmbiguousSplitError, NotACoverError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        _write_summary(out, dict(base, status="invalid", error=str(exc)))
        return 1, base
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        info = dict(base, status="non_convergent", error=str(exc))
        if exc.trace is not None:
            exc.trace.to_csv(out / "trace.csv")
            info["weak_residual_tail"] = exc.trace.weak_residual[-5:]
            info["ratio_fit"] = exc.trace.ratio_fit()
        _write_summary(out, info)
        return 2, info
    summary = dict(base, status="ok", result=result)
    _write_summary(out, summary)
    return 0, summary


def main(argv=None):
    parser = argparse.ArgumentParser(prog="eclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="worker count for independent runs")
    p_run.add_argument("--seed", type=int, default=None, help="seed for randomized test forms")
    p_val = sub.add_parser("validate", help="check a scenario against the schema")
    p_val.add_argument("scenario")
    sub.add_parser("formats", help="print the field dump format")
    args = parser.parse_args(argv)

    if args.command == "formats":
        print(json.dumps(FIELD_FORMAT, indent=1, sort_keys=True))
        return 0
    if args.command == "validate":
        try:
            load_scenario(args.scenario)
        except ScenarioError as exc:
            print(f"invalid: {exc}", file=sys.stderr)
            return 1
        print("ok")
        return 0
    code, _ = run(args.scenario, args.out, args.jobs, args.seed)
    print(f"exit {code} (kernels: {kernels.BACKEND})", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
