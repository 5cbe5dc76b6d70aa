"""Command-line entry points.

Each command reads a JSON run configuration and writes ``report.json`` plus
CSV tables and field binaries into the output directory.

Exit codes: 0 success, 1 a check failed (verdict, flags, counterexamples),
2 bad configuration, domain error or missing input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cc_solver import SolverError, decay_experiment
from .coefficients import b_tensor
from .config import ConfigError, RunConfig, load_config, stream
from .diagnostics import DiagnosticsConfig, bootstrap_report, higher_order_probe, lemma_suite
from .ellipticity import HessianSampler, certify_region
from .expr import parse as parse_expression
from .fields import BallRegion, Grid, ScalarField, UsageError, field_to_csv, load_field, save_field
from .functionals import DomainError, get_functional
from .symtensor import symmat
from .var_solver import LineSearchError, VarProblem, minimize, weak_residual

log = logging.getLogger("ddreg")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_report(out: Path, report: dict) -> None:
    text = json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False)
    (out / "report.json").write_text(text + "\n")


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _grid(cfg: RunConfig) -> Grid:
    return Grid(cfg["grid"]["n"], cfg["grid"]["m"])


def _expression_field(grid: Grid, text: str) -> ScalarField:
    vals = parse_expression(text)(*grid.coords())
    vals = np.where(np.isinf(vals), np.nan, vals)
    return ScalarField(grid, vals)


def _base_report(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "version": __version__, "config": cfg.to_dict()}


# ------------------------------------------------------------------ commands

def cmd_certify(cfg: RunConfig, out: Path) -> int:
    f = get_functional(cfg["functional"]["name"])
    s = cfg["sampler"]
    seed = int(stream(cfg["seed"], "sampler").integers(2 ** 63))
    matrices = tuple(tuple(map(tuple, symmat(m))) for m in s["matrices"])
    sampler = HessianSampler(s["mode"], cfg["grid"]["n"], s["radius"], s["count"], seed, matrices)
    rep = certify_region(f, sampler, threshold=cfg["tolerances"]["legendre_threshold"])
    report = _base_report("certify", cfg)
    report["result"] = rep.to_dict()
    ok = rep.verdict in ("regular_plus", "regular_minus")
    report["exit_code"] = EXIT_OK if ok else EXIT_CHECK
    write_report(out, report)
    log.info("verdict %s (Legendre %.6g)", rep.verdict, rep.lambda_legendre)
    return report["exit_code"]


def cmd_solve_cc(cfg: RunConfig, out: Path) -> int:
    grid = _grid(cfg)
    f = get_functional(cfg["functional"]["name"])
    n = grid.n
    m0 = np.zeros((n, n)) if cfg["cc"]["freeze_at"] is None else symmat(cfg["cc"]["freeze_at"])
    if m0.shape != (n, n):
        raise ConfigError(f"cc.freeze_at must be a {n}x{n} matrix")
    c0 = b_tensor(f, m0)
    data = _expression_field(grid, cfg["boundary"])
    report = _base_report("solve-cc", cfg)
    try:
        energy, osc, sol = decay_experiment(c0, data, cfg.radii(), cfg["cc"]["region_radius"],
                                            tol=cfg["tolerances"]["solve"], method=cfg["cc"]["method"])
    except SolverError as exc:
        report.update(error=str(exc), diagnostic=exc.diagnostic, exit_code=EXIT_SOLVER)
        if exc.best is not None:
            np.save(out / "best_iterate.npy", exc.best)
        write_report(out, report)
        log.error("%s", exc)
        return EXIT_SOLVER
    save_field(out / "field.bin", sol.w)
    field_to_csv(out / "field.csv", sol.w)
    write_csv(out / "decay.csv", ["radius", "energy", "oscillation"],
              zip(energy.radii, energy.values, osc.values))
    region = BallRegion((0.0,) * n, cfg["cc"]["region_radius"])
    inside = region.mask(grid)
    diff = np.abs(sol.w.values[inside] - data.values[inside])
    report["result"] = {
        "method": sol.method, "solver_iterations": sol.solver_iterations,
        "residual_norm": sol.residual_norm, "unknowns": sol.unknowns,
        "energy_profile": energy.to_dict(), "oscillation_profile": osc.to_dict(),
        "predicted_energy_exponent": float(n), "predicted_oscillation_exponent": float(n + 2),
        "max_abs_diff_from_boundary_data": float(np.max(diff)) if diff.size else 0.0,
        "max_abs_field": float(np.nanmax(np.abs(sol.w.values))),
    }
    report["exit_code"] = EXIT_OK
    write_report(out, report)
    return EXIT_OK


def _var_problem(cfg: RunConfig, grid: Grid) -> VarProblem:
    f = get_functional(cfg["functional"]["name"])
    data = _expression_field(grid, cfg["boundary"])
    init = _expression_field(grid, cfg["init"] or cfg["boundary"])
    return VarProblem(f, grid, data, init, cfg["var"]["certified_radius"])


def _solve_var(cfg: RunConfig, out: Path):
    """Run the minimizer; returns ``(field or None, result dict, exit code)``."""
    grid = _grid(cfg)
    problem = _var_problem(cfg, grid)
    v = cfg["var"]
    try:
        u, trace = minimize(problem, tol=cfg["tolerances"]["solve"], max_iter=v["max_iter"],
                            method=v["method"], precondition=v["precondition"], memory=v["memory"])
    except LineSearchError as exc:
        _write_trace(out, exc.trace)
        log.error("%s", exc)
        return None, {"error": str(exc), "trace": exc.trace.to_dict()}, EXIT_SOLVER
    _write_trace(out, trace)
    save_field(out / "field.bin", u)
    field_to_csv(out / "field.csv", u)
    result = {
        "trace": trace.to_dict(),
        "weak_residual_discrete": weak_residual(problem, u, v["test_count"], "discrete"),
        "weak_residual_continuum": weak_residual(problem, u, v["test_count"], "continuum"),
        "energy_strictly_decreasing": bool(np.all(np.asarray(trace.decrease) > 0)),
        "max_abs_diff_from_boundary_data": float(np.nanmax(np.abs(u.values - problem.boundary_data.values))),
    }
    return u, result, EXIT_OK if trace.converged else EXIT_SOLVER


def _write_trace(out: Path, trace) -> None:
    steps = [None] + list(trace.step)
    write_csv(out / "trace.csv", ["iteration", "energy", "grad_norm", "hessian_max", "step"],
              ((k, trace.energy[k], trace.grad_norm[k], trace.hessian_max[k],
                "" if steps[k] is None else steps[k]) for k in range(len(trace.energy))))


def cmd_solve_var(cfg: RunConfig, out: Path) -> int:
    report = _base_report("solve-var", cfg)
    _, result, code = _solve_var(cfg, out)
    report["result"] = result
    report["exit_code"] = code
    write_report(out, report)
    return code


def _diagnostics_config(cfg: RunConfig) -> DiagnosticsConfig:
    d, t = cfg["diagnose"], cfg["tolerances"]
    return DiagnosticsConfig(radii=cfg.radii(), tol_energy=t["energy_exponent"],
                             tol_oscillation=t["oscillation_exponent"],
                             holder_radius=d["holder_radius"], holder_tolerance=t["holder_change"],
                             pair_budget=d["pair_budget"], zero_tol=t["zero"],
                             refine_levels=d["refine_levels"], multi_index=tuple(d["multi_index"]),
                             probe_levels=d["probe_levels"])


def cmd_diagnose(cfg: RunConfig, out: Path) -> int:
    d = cfg["diagnose"]
    f = get_functional(cfg["functional"]["name"])
    report = _base_report("diagnose", cfg)
    if d["source"] == "file":
        path = cfg.resolve(d["field_path"])
        if not path.exists():
            raise UsageError(f"field file {path} does not exist")
        u = load_field(path)
    elif d["source"] == "boundary":
        u = _expression_field(_grid(cfg), cfg["boundary"])
    else:
        u, result, code = _solve_var(cfg, out)
        report["solve"] = result
        if code != EXIT_OK:
            report["exit_code"] = code
            write_report(out, report)
            return code
    dcfg = _diagnostics_config(cfg)
    boot = bootstrap_report(u, f, d["alpha"], dcfg)
    report["bootstrap"] = boot.to_dict()
    flags = dict(boot.flags)
    rows = []
    for ax in boot.axes:
        rows.extend((ax.axis, r, e, o) for r, e, o in
                    zip(ax.energy.radii, ax.energy.values, ax.oscillation.values))
    write_csv(out / "profiles.csv", ["axis", "radius", "energy", "oscillation"], rows)
    write_csv(out / "refinement.csv", ["h", "holder_d3u", "holder_d2g"],
              ((r["h"], r["holder_d3u"], r["holder_d2g"]) for r in boot.refinement))
    review = []
    probes = []
    for order in d["probe_orders"]:
        probe = higher_order_probe(u, f, order, dcfg)
        probes.append(probe.to_dict())
        if not probe.monotone:
            review.append(f"order-{order} probe residual does not decrease under refinement")
    if probes:
        report["probes"] = probes
        write_csv(out / "probes.csv", ["order", "h", "residual"],
                  ((p["order"], lv["h"], lv["residual"]) for p in probes for lv in p["levels"]))
    if d["lemma_cases"]:
        summary, _ = lemma_suite(d["lemma_cases"], stream(cfg["seed"], "lemma"))
        report["lemma"] = summary
        flags["lemma_no_counterexamples"] = summary["counterexamples"] == 0
    report["flags"] = flags
    report["review"] = review
    code = EXIT_OK if all(flags.values()) else EXIT_CHECK
    report["exit_code"] = code
    write_report(out, report)
    return code


def cmd_lemma_check(cfg: RunConfig, out: Path) -> int:
    summary, results = lemma_suite(cfg["lemma"]["cases"], stream(cfg["seed"], "lemma"))
    report = _base_report("lemma-check", cfg)
    report["result"] = summary
    write_csv(out / "lemma_cases.csv",
              ["case", "hypothesis_holds", "epsilon_small", "epsilon0", "c_bound", "c_min",
               "conclusion_holds"],
              ((k, r.hypothesis_holds, r.epsilon_small, r.epsilon0, r.c_bound, r.c_min,
                r.conclusion_holds) for k, r in enumerate(results)))
    code = EXIT_OK if summary["counterexamples"] == 0 else EXIT_CHECK
    report["exit_code"] = code
    write_report(out, report)
    return code


COMMANDS = {
    "certify": cmd_certify,
    "solve-cc": cmd_solve_cc,
    "solve-var": cmd_solve_var,
    "diagnose": cmd_diagnose,
    "lemma-check": cmd_lemma_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: config 'output' or '.')")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg["output"] or ".")
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, UsageError, DomainError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ddreg {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
