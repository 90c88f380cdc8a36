"""Scenario-driven command line front end.

A scenario is a JSON file naming a geometry, catalog fields, one
verification operation, suite parameters, and tolerance overrides.  ``run``
executes one scenario and writes a machine-readable report (exit 0 pass,
1 checks failed, 2 configuration error); ``batch`` runs a directory of
scenarios in parallel and writes a summary CSV.

Reports are deterministic for a fixed scenario and seed up to the volatile
``timing`` block.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__, catalog, distributions
from .distributions import (BDist, CDist, CompositeDist, FDist, cauchy_flux,
                            distributional_div, identity1_rhs, identity2_rhs,
                            mollify_convergence, pair)
from .equilibrium import (Tolerances, dilatational_residuals, dipole_limit,
                          local_report, make_test_suite, weak_residuals)
from .errors import ConfigError, StressDistError
from .fields import make_bump, make_gradient_test_field, surface_polynomial
from .stressfn import check_lemma2_conditions, extract_densities, global_conditions

SCHEMA_VERSION = 1

OPERATIONS = ("verify-identity", "check-equilibrium", "dipole-limit",
              "stress-function", "global-conditions", "mollify", "cauchy-flux")

_TOP_KEYS = {"schema_version", "name", "operation", "seed", "geometry",
             "fields", "suite", "tolerances", "parameters"}
_GEOM_KEYS = {"domain", "interface"}
_SUITE_KEYS = {"count", "seed"}


class _Check:
    def __init__(self, cid, residual, tolerance, passed=None, extra=None):
        self.cid = cid
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        self.passed = (abs(self.residual) <= self.tolerance
                       if passed is None else bool(passed))
        self.extra = extra or {}

    def to_dict(self):
        d = {"id": self.cid, "residual": self.residual,
             "tolerance": self.tolerance, "pass": self.passed}
        d.update(self.extra)
        return d


def _fail(errors, path, message):
    errors.append(f"{path}: {message}")


def validate_scenario(cfg):
    """Schema check with json-path diagnostics; unknown keys are rejected."""
    errors = []
    if not isinstance(cfg, dict):
        return ["$: scenario must be a JSON object"]
    for k in cfg:
        if k not in _TOP_KEYS:
            _fail(errors, f"$.{k}", "unknown key")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        _fail(errors, "$.schema_version", f"must be {SCHEMA_VERSION}")
    op = cfg.get("operation")
    if op not in OPERATIONS:
        _fail(errors, "$.operation", f"must be one of {sorted(OPERATIONS)}")
    geom = cfg.get("geometry")
    if not isinstance(geom, dict):
        _fail(errors, "$.geometry", "missing or not an object")
    else:
        for k in geom:
            if k not in _GEOM_KEYS:
                _fail(errors, f"$.geometry.{k}", "unknown key")
        if not isinstance(geom.get("domain"), dict):
            _fail(errors, "$.geometry.domain", "missing or not an object")
    suite = cfg.get("suite", {})
    if not isinstance(suite, dict):
        _fail(errors, "$.suite", "not an object")
    else:
        for k in suite:
            if k not in _SUITE_KEYS:
                _fail(errors, f"$.suite.{k}", "unknown key")
    randomized = op in ("verify-identity", "check-equilibrium", "dipole-limit",
                        "mollify", "cauchy-flux", "stress-function")
    if randomized and not isinstance(cfg.get("seed"), int):
        _fail(errors, "$.seed", "an integer seed is mandatory")
    return errors


def _build_geometry(cfg):
    domain = catalog.build_domain(cfg["geometry"]["domain"])
    interface = catalog.build_interface(cfg["geometry"].get("interface"),
                                        domain)
    return domain, interface


def _tolerances(cfg):
    t = Tolerances()
    over = cfg.get("tolerances", {})
    if "local" in over:
        t.local = float(over["local"])
    if "weak_factor" in over:
        t.weak_factor = float(over["weak_factor"])
    return t


# ---------------------------------------------------------------------------
# operation drivers: each returns (checks, tables)


def _op_verify_identity(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    family = params.get("family", "B")
    which = int(params.get("identity", 1))
    count = int(cfg.get("suite", {}).get("count", 5))
    abs_tol = float(params.get("abs_tol", distributions.ABS_TOL))
    rel_tol = float(params.get("rel_tol", distributions.REL_TOL))
    checks = []
    rows = []
    for j in range(count):
        dist = _random_dist(family, domain, interface, rng,
                            rank=2 if which == 2 else 1)
        if which == 1:
            test = _random_scalar_bump(domain, interface, rng)
            lhs = distributional_div(dist, test)
            rhs = identity1_rhs(dist, test)
        else:
            test = _random_gradient_field(domain, rng)
            lhs = pair(dist, test)
            rhs = identity2_rhs(dist, test)
        scale = max(abs(lhs.value), abs(rhs.value))
        tol = max(abs_tol, rel_tol * scale)
        checks.append(_Check(f"identity{which}-{family}-{j}",
                             lhs.value - rhs.value, tol,
                             extra={"lhs": lhs.value, "rhs": rhs.value,
                                    "estimate": lhs.error + rhs.error}))
        rows.append((f"{family}-{j}", lhs.value, rhs.value,
                     abs(lhs.value - rhs.value)))
    return checks, {"pairings": {"columns": ["scenario", "lhs", "rhs", "abs_diff"],
                                 "rows": rows}}


def _random_dist(family, domain, interface, rng, rank):
    from .fields import PiecewiseField, PolyField
    if family == "B":
        make = (PolyField.random_symmetric if rank == 2
                else PolyField.random_vector)
        return BDist(domain, interface,
                     PiecewiseField(rank, make(rng, 3), make(rng, 3),
                                    interface, domain.length_scale))
    density = surface_polynomial(rng, rank, interface, degree=2,
                                 symmetric=False)
    return CDist(interface, density) if family == "C" else \
        FDist(interface, density)


def _random_scalar_bump(domain, interface, rng):
    from .equilibrium import _crossing_bump_geometry
    c, r = _crossing_bump_geometry(domain, interface, rng)
    return make_bump(domain, c, r, rank=0, rng=rng, degree=3)


def _random_gradient_field(domain, rng):
    constants = [np.zeros(3)]
    for _ in range(1, domain.k):
        constants.append(rng.uniform(-1, 1, 3))
    if domain.k == 1:
        lo, hi = domain.bounding_box()
        return make_gradient_test_field(
            domain, constants, rng=rng, center=0.5 * (lo + hi),
            radius=0.2 * float(np.min(hi - lo)),
            direction=rng.normal(size=3))
    return make_gradient_test_field(domain, constants)


def _op_check_equilibrium(cfg, domain, interface, rng):
    tol = _tolerances(cfg)
    scn = catalog.build_scenario_fields(cfg.get("fields", {}), domain,
                                        interface, tol)
    scn.check_symmetry()
    checks = []
    if scn.dilatational is not None:
        rep = dilatational_residuals(scn)
    else:
        rep = local_report(scn)
    for c in rep.conditions:
        checks.append(_Check(c.cond, c.residual, c.tolerance))
    count = int(cfg.get("suite", {}).get("count", 9))
    seed = int(cfg.get("suite", {}).get("seed", cfg.get("seed", 0)))
    tests = make_test_suite(domain, interface, count,
                            np.random.default_rng(seed))
    for label, value, wtol in weak_residuals(scn, tests):
        checks.append(_Check(label, value, wtol))
    return checks, {}


def _op_dipole_limit(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    sigma0 = np.asarray(params.get("sigma0", [[1, 0, 0], [0, -0.5, 0], [0, 0, 0]]),
                        dtype=float)
    h_values = params.get("h_values", [0.2, 0.1, 0.05, 0.025, 0.0125])
    count = int(cfg.get("suite", {}).get("count", 10))
    seed = int(cfg.get("suite", {}).get("seed", cfg.get("seed", 0)))
    min_order = float(params.get("min_order", 0.9))
    rep = dipole_limit(domain, sigma0, h_values, z0=params.get("z", 0.0),
                       n_tests=count, seed=seed, min_order=min_order)
    frac_needed = float(params.get("min_fraction", 0.9))
    checks = [_Check("dipole-order-fraction", rep.fraction_first_order, 1.0,
                     passed=rep.fraction_first_order >= frac_needed,
                     extra={"orders": [None if np.isnan(o) else round(o, 4)
                                       for o in rep.orders]})]
    rows = [(j, h, e) for j, h, e in rep.rows()]
    return checks, {"convergence": {"columns": ["test", "h", "abs_error"],
                                    "rows": rows}}


def _op_stress_function(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    tol = float(params.get("tol", 1e-6))
    checks = []
    fields_cfg = cfg.get("fields", {})
    if "potential" in fields_cfg:
        potential = catalog.build_potential(fields_cfg["potential"], domain,
                                            interface)
        triple = extract_densities(potential, interface)
        scn = triple.scenario(domain, tolerances=Tolerances(local=tol))
        rep = local_report(scn)
        for c in rep.conditions:
            checks.append(_Check(c.cond, c.residual, c.tolerance))
        dist = triple.composite(domain)
        sigma = triple
    else:
        scn = catalog.build_scenario_fields(fields_cfg, domain, interface)
        from .equilibrium import bulk_residual
        bk, _ = bulk_residual(scn)
        checks.append(_Check("12a", bk, tol))
        dist = CompositeDist(b=BDist(domain, interface, scn.sigma))
        sigma = scn.sigma
    lem = check_lemma2_conditions(dist, domain, tol=tol)
    for lab, v, e, t in lem.entries:
        checks.append(_Check(lab, v, t, extra={"estimate": e}))
    gc = global_conditions(sigma, domain, interface, tol=tol)
    for comp in gc.components:
        if comp["component"] == 0:
            continue
        checks.append(_Check(f"force-component{comp['component']}",
                             float(np.linalg.norm(comp["force"])), tol))
        checks.append(_Check(f"moment-component{comp['component']}",
                             float(np.linalg.norm(comp["moment"])), tol))
    return checks, {}


def _op_global_conditions(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    tol = float(params.get("tol", 1e-6))
    fields_cfg = cfg.get("fields", {})
    if "potential" in fields_cfg:
        potential = catalog.build_potential(fields_cfg["potential"], domain,
                                            interface)
        sigma = extract_densities(potential, interface)
    else:
        scn = catalog.build_scenario_fields(fields_cfg, domain, interface)
        sigma = scn.sigma
    gc = global_conditions(sigma, domain, interface, tol=tol)
    checks = []
    rows = []
    for comp in gc.components:
        f = float(np.linalg.norm(comp["force"]))
        m = float(np.linalg.norm(comp["moment"]))
        rows.append((comp["component"], f, m))
        if comp["component"] == 0:
            continue
        checks.append(_Check(f"force-component{comp['component']}", f, tol))
        checks.append(_Check(f"moment-component{comp['component']}", m, tol))
    return checks, {"global": {"columns": ["component", "force_norm",
                                           "moment_norm"], "rows": rows}}


def _op_mollify(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    family = params.get("family", "C")
    rhos = params.get("rhos", [0.08, 0.04, 0.02, 0.01])
    min_order = float(params.get("min_order", 1.0))
    dist = _random_dist(family, domain, interface, rng, rank=2)
    from .equilibrium import _crossing_bump_geometry
    c, r = _crossing_bump_geometry(domain, interface, rng)
    test = make_bump(domain, c, r, rank=2, rng=rng, degree=2)
    tab = mollify_convergence(dist, test, rhos, domain=domain)
    order = tab.order if not np.isnan(tab.order) else float('inf')
    checks = [_Check("mollify-order", order, float('inf'),
                     passed=order >= min_order,
                     extra={"required": min_order})]
    rows = list(zip(tab.rhos, tab.values, tab.errors))
    return checks, {"convergence": {"columns": ["rho", "value", "abs_error"],
                                    "rows": rows}}


def _op_cauchy_flux(cfg, domain, interface, rng):
    params = cfg.get("parameters", {})
    rhos = params.get("rhos", [0.05, 0.025, 0.0125, 0.00625])
    expect = params.get("expect", "converge")
    probe_cfg = params.get("probe", {"kind": "sphere", "radius": 1.5})
    probe = catalog.build_interface(probe_cfg, domain)
    fields_cfg = cfg.get("fields", {})
    b = catalog.build_bulk_tensor(fields_cfg.get("sigma", {"kind": "zero"}),
                                  domain, interface)
    c = catalog.build_surface_tensor(fields_cfg.get("sigma1", {"kind": "zero"}),
                                     interface)
    f = catalog.build_surface_tensor(fields_cfg.get("sigma2", {"kind": "zero"}),
                                     interface)
    dist = CompositeDist(
        b=BDist(domain, interface, b) if b is not None else None,
        c=CDist(interface, c) if c is not None else None,
        f=FDist(interface, f) if f is not None else None)
    rep = cauchy_flux(dist, probe, rhos, domain=domain)
    ok = rep.converged if expect == "converge" else not rep.converged
    slope = rep.divergence_slope
    checks = [_Check("cauchy-flux", 0.0 if ok else 1.0, 0.5, passed=ok,
                     extra={"expect": expect, "converged": rep.converged,
                            "order": None if np.isnan(rep.order) else rep.order,
                            "magnitude_slope": None if np.isnan(slope) else slope})]
    rows = [(r, float(np.linalg.norm(fv)), e)
            for r, fv, e in zip(rep.rhos, rep.fluxes, rep.errors)]
    return checks, {"flux": {"columns": ["rho", "flux_norm", "abs_error"],
                             "rows": rows}}


_DRIVERS = {
    "verify-identity": _op_verify_identity,
    "check-equilibrium": _op_check_equilibrium,
    "dipole-limit": _op_dipole_limit,
    "stress-function": _op_stress_function,
    "global-conditions": _op_global_conditions,
    "mollify": _op_mollify,
    "cauchy-flux": _op_cauchy_flux,
}


# ---------------------------------------------------------------------------
# run / batch


def run_scenario(cfg, refine=0, seed_override=None):
    """Execute one validated scenario dict; returns the report dict."""
    errors = validate_scenario(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    if seed_override is not None:
        cfg = dict(cfg)
        cfg["seed"] = int(seed_override)
    t0 = time.time()
    old_boost = distributions.LEVEL_BOOST
    distributions.LEVEL_BOOST = int(refine)
    try:
        domain, interface = _build_geometry(cfg)
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        checks, tables = _DRIVERS[cfg["operation"]](cfg, domain, interface, rng)
    finally:
        distributions.LEVEL_BOOST = old_boost
    passed = all(c.passed for c in checks)
    report = {
        "schema_version": SCHEMA_VERSION,
        "library_version": __version__,
        "scenario": cfg,
        "operation": cfg["operation"],
        "checks": [c.to_dict() for c in checks],
        "tables": {k: v for k, v in tables.items()},
        "summary": {
            "pass": bool(passed),
            "n_pass": sum(1 for c in checks if c.passed),
            "n_fail": sum(1 for c in checks if not c.passed),
            "failing": [c.cid for c in checks if not c.passed],
        },
        "timing": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": round(time.time() - t0, 3),
        },
    }
    return report


def _dump_report(report, out_path, fmt):
    if fmt == "report":
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for name, table in sorted(report["tables"].items()):
                writer.writerow([name])
                writer.writerow(table["columns"])
                for row in table["rows"]:
                    writer.writerow(list(row))
            if not report["tables"]:
                writer.writerow(["id", "residual", "tolerance", "pass"])
                for c in report["checks"]:
                    writer.writerow([c["id"], c["residual"], c["tolerance"],
                                     c["pass"]])


def run(path, refine=0, seed=None, out=None, fmt="report"):
    """Run one scenario file. Exit codes: 0 pass, 1 failed checks, 2 config."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read scenario {path}: {exc}", file=sys.stderr)
        return 2, None
    try:
        report = run_scenario(cfg, refine=refine, seed_override=seed)
    except (ConfigError, StressDistError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2, None
    out_path = out or (os.path.splitext(path)[0] + ".report.json")
    _dump_report(report, out_path, fmt)
    return (0 if report["summary"]["pass"] else 1), report


def batch(directory, refine=0, out=None, jobs=None):
    """Run every *.json scenario in a directory; summary CSV + exit code."""
    try:
        names = sorted(n for n in os.listdir(directory) if n.endswith(".json")
                       and not n.endswith(".report.json"))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2, []
    if not names:
        print(f"error: no scenario files in {directory}", file=sys.stderr)
        return 2, []
    jobs = jobs or int(os.environ.get("STRESSDIST_THREADS", "0")) or None
    results = []

    def one(name):
        code, report = run(os.path.join(directory, name), refine=refine)
        return name, code, report

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for name, code, report in pool.map(one, names):
            results.append((name, code, report))

    out_path = out or os.path.join(directory, "summary.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "exit_code", "pass", "n_pass", "n_fail"])
        for name, code, report in results:
            if report is None:
                writer.writerow([name, code, "", "", ""])
            else:
                s = report["summary"]
                writer.writerow([name, code, s["pass"], s["n_pass"], s["n_fail"]])
    worst = max(code for _, code, _ in results)
    return worst, results


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stressdist",
        description="Quadrature-based verification of singular stress fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--refine", type=int, default=0,
                       help="extra quadrature refinement levels")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="report output path")
    p_run.add_argument("--format", dest="fmt", choices=("report", "csv"),
                       default="report")

    p_batch = sub.add_parser("batch", help="run a directory of scenarios")
    p_batch.add_argument("directory")
    p_batch.add_argument("--refine", type=int, default=0)
    p_batch.add_argument("--out", default=None, help="summary CSV path")
    p_batch.add_argument("--jobs", type=int, default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        code, _ = run(args.scenario, refine=args.refine, seed=args.seed,
                      out=args.out, fmt=args.fmt)
        return code
    code, _ = batch(args.directory, refine=args.refine, out=args.out,
                    jobs=args.jobs)
    return code


if __name__ == "__main__":
    sys.exit(main())
