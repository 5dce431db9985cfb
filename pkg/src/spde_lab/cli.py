"""Command line entry point: ``spde-lab run | list-scenarios | check``.

A run writes into ``--out`` (default ``$SPDE_LAB_OUT`` or ``spde_runs``,
then ``<name>-<hash12>``): norms.csv, refinement.csv, exponents.csv,
report.json, manifest.json and, when ``runs.stride`` > 0, one
``snapshots/path_XXXXX.bin`` per path with the little-endian layout::

    b"SPDE"  u32 version (1)  u32 n  u32 dims[n]  u32 M_t  u32 stride
    float64 values, one row-major lattice per stored step (t = 0, stride dt, ...)

Exit codes: 0 ok, 1 unexpected, 2 configuration, 3 contract or failed
check, 4 numerical, 5 analysis.  Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    QUANTITY_KINDS,
    aggregate_norms,
    fit_boundary_exponent,
    refinement_study,
    run_monte_carlo,
)
from .config import load_config, scenario_hash
from .domain import check_compatibility
from .errors import AnalysisError, ConfigurationError, ContractViolation, PreconditionError, SpdeLabError
from .fields import scalar_field, verify_parabolicity
from .noise import sample_wiener_bundle
from .output import NORM_COLUMNS, REFINEMENT_COLUMNS, write_csv, write_json, write_snapshots
from .scenarios import list_builtins
from .solver import solve_decomposition, solve_direct, solve_semilinear_picard

__all__ = ["main", "run_scenario", "run_checks", "format_scenario_list"]


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def run_checks(sc, waive: bool = False) -> dict:
    """Parabolicity and compatibility checks; raises PreconditionError on an unexpected failure."""
    grid, _ = sc.discretize()
    coeffs = sc.coefficients()
    times = sc.check_times()
    out = {"waived": bool(waive)}
    if sc.degenerate:
        out["parabolicity"] = {"skipped": "degenerate test mode"}
        par_ok = True
    else:
        rep = verify_parabolicity(coeffs, grid, times, sc.bounds())
        out["parabolicity"] = rep.to_dict()
        par_ok = rep.passed
    comp = check_compatibility(coeffs, grid, times, sc.compat_tol)
    out["compatibility"] = comp.to_dict()
    out["compatibility"]["expected_incompatible"] = sc.expect_incompatible
    comp_ok = comp.passed or sc.expect_incompatible
    out["passed"] = bool(par_ok and comp_ok)
    if not out["passed"] and not waive:
        what = "parabolicity" if not par_ok else "compatibility"
        raise PreconditionError(f"{what} check failed for scenario {sc.name!r}: {json.dumps(out, default=str)}")
    return out


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _row(sc, pipeline, rep, K, M):
    return {
        "scenario": sc.name,
        "pipeline": pipeline,
        "h": rep.resolution[0],
        "dt": rep.resolution[1],
        "K": K,
        "M": M,
        "norm_kind": rep.norm_kind,
        "p": rep.p,
        "value": rep.value,
        "ci_halfwidth": rep.ci_halfwidth,
        "poisoned": rep.poisoned,
    }


def _request(req):
    r = {k: v for k, v in req.items() if k in ("kind", "p", "region", "final_only", "alpha", "stride")}
    if req["kind"] == "MaxError":
        r["reference"] = scalar_field(req["reference"])
    if req["kind"] == "SupGrad":
        r["p"] = 1.0
    return r


def _scalar_report(req, values, resolution):
    kind = req["kind"]
    if kind == "MaxError":
        v = np.asarray(values, dtype=float)
        ok = np.isfinite(v)
        if not ok.any():
            raise AnalysisError("all paths poisoned", poisoned=int(v.size))
        rep = aggregate_norms(v, 1.0, kind, resolution)
        rep.value = float(v[ok].max())
        rep.ci_halfwidth = None
        return rep
    p = float(req.get("p", 2.0))
    return aggregate_norms(values, p, kind, resolution, req.get("alpha") if kind.startswith("Holder") else None)


def _boundary_exponents(sc, req, paths, seed, threads):
    if abs(float(req.get("time", sc.t_end)) - sc.t_end) > 1e-12:
        raise ConfigurationError("boundary_exponent is evaluated at the final time only; set time = t_end")
    if not sc.domain.is_half_space:
        raise ConfigurationError("boundary_exponent needs a half_line or half_plane domain")
    mc = run_monte_carlo(sc, paths, seed=seed, threads=threads, keep_final=True)
    grid = mc.grid
    x = grid.axes[0]
    window = tuple(req["window"]) if "window" in req else (4 * grid.h, 0.1 * sc.domain.diameter)
    rows = []
    for i, prof in enumerate(mc.final):
        line = prof if prof.ndim == 1 else prof[:, prof.shape[1] // 2]
        row = {"path": i, "alpha_hat": None, "stderr": None, "r_squared": None, "status": "ok"}
        if mc.poisoned[i]:
            row["status"] = "poisoned"
        else:
            try:
                fit = fit_boundary_exponent(line, x, window, h=grid.h)
                row.update(alpha_hat=fit.alpha_hat, stderr=fit.stderr, r_squared=fit.r_squared)
            except AnalysisError:
                row["status"] = "not_one_signed"
        rows.append(row)
    fitted = [r["alpha_hat"] for r in rows if r["alpha_hat"] is not None]
    summary = {
        "window": list(window),
        "paths": paths,
        "fitted": len(fitted),
        "fraction_alpha_le_half": sum(a <= 0.5 for a in fitted) / paths,
        "median_alpha": float(np.median(fitted)) if fitted else None,
    }
    return rows, summary


def _snapshots(sc, outdir, paths, seed):
    grid, tg = sc.discretize()
    problem = sc.problem()
    files = []
    snap = outdir / "snapshots"
    snap.mkdir(exist_ok=True)
    for i in range(paths):
        bundle = sample_wiener_bundle((seed, i), problem.coeffs.modes, tg)
        if sc.pipeline == "direct":
            sol = solve_direct(problem, bundle, grid, tg, stride=sc.stride)
        elif sc.pipeline == "decomposition":
            sol = solve_decomposition(problem, bundle, grid, tg, stride=sc.stride, degenerate_ok=sc.degenerate)
        else:
            sol, _ = solve_semilinear_picard(problem, bundle, grid, tg)
            sol.values = sol.values[:: sc.stride]
        files.append(write_snapshots(snap / f"path_{i:05d}.bin", sol.values, tg.num_steps, sc.stride))
    return files


def _output_dir(out, name, digest):
    if out:
        return Path(out)
    root = Path(os.environ.get("SPDE_LAB_OUT", "spde_runs"))
    return root / f"{name}-{digest[:12]}"


def run_scenario(config_path, overrides=(), *, paths=None, resolution=None, seed=None, out=None,
                 threads=None, waive_checks=False) -> Path:
    """Checks, solve, analysis and emission for one scenario; returns the output directory."""
    overrides = list(overrides)
    if paths is not None:
        overrides.append(f"runs.paths={int(paths)}")
    if resolution is not None:
        overrides.append(f"resolution={int(resolution)}")
    if seed is not None:
        overrides.append(f"noise.master_seed={int(seed)}")
    cfg, sc = load_config(config_path, overrides)
    digest = scenario_hash(cfg)
    threads = int(threads or sc.threads or os.cpu_count() or 1)
    checks = run_checks(sc, waive_checks)

    outdir = _output_dir(out, sc.name, digest)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    K = sc.modes
    report = {"scenario": sc.name, "checks": checks, "quantities": [], "refinements": [], "exponents": None}
    norm_rows, ref_rows = [], []

    single = [r for r in sc.analysis if r["kind"] in QUANTITY_KINDS and "refine" not in r and "paths" not in r]
    if single:
        mc = run_monte_carlo(sc, sc.paths, requests=[_request(r) for r in single], threads=threads)
        res = (mc.grid.h, mc.time_grid.dt)
        for k, req in enumerate(single):
            rep = _scalar_report(req, mc.values[k], res)
            norm_rows.append(_row(sc, sc.pipeline, rep, K, sc.paths))
            report["quantities"].append({"label": req.get("label", req["kind"]), **rep.to_dict()})
    for req in sc.analysis:
        kind = req["kind"]
        if kind == "boundary_exponent":
            rows, summary = _boundary_exponents(sc, req, int(req.get("paths", sc.paths)), sc.seed, threads)
            files.append(write_csv(outdir / "exponents.csv", ("path", "alpha_hat", "stderr", "r_squared", "status"), rows))
            summary["threshold_exponent"] = sc.parameters.get("threshold_exponent")
            report["exponents"] = summary
            continue
        if kind not in QUANTITY_KINDS:
            raise ConfigurationError(f"unknown analysis kind {kind!r}")
        M = int(req.get("paths", sc.paths))
        if "refine" in req:
            r = _request(req)
            study = refinement_study(
                sc, list(req["refine"]), kind, float(r.get("p", 2.0)), M, threads=threads,
                region=req.get("region"), final_only=bool(req.get("final_only", False)),
                alpha=float(req.get("alpha", 0.3)), stride_time=req.get("stride_time"),
            )
            for i, rep in enumerate(study.reports):
                row = _row(sc, sc.pipeline, rep, K, M)
                row["growth_ratio"] = study.growth_ratios[i - 1] if i else None
                row["classification"] = study.classification
                ref_rows.append(row)
            report["refinements"].append({"label": req.get("label", kind), **study.to_dict()})
        elif req not in single:
            mc = run_monte_carlo(sc, M, requests=[_request(req)], threads=threads)
            rep = _scalar_report(req, mc.values[0], (mc.grid.h, mc.time_grid.dt))
            norm_rows.append(_row(sc, sc.pipeline, rep, K, M))
            report["quantities"].append({"label": req.get("label", kind), **rep.to_dict()})

    if norm_rows:
        files.append(write_csv(outdir / "norms.csv", NORM_COLUMNS, norm_rows))
    if ref_rows:
        files.append(write_csv(outdir / "refinement.csv", REFINEMENT_COLUMNS, ref_rows))
    if sc.stride:
        files.extend(_snapshots(sc, outdir, sc.paths, sc.seed))
    files.append(write_json(outdir / "report.json", report))
    manifest = {
        "scenario_hash": digest,
        "code_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "effective_parameters": cfg,
        "waived_checks": bool(waive_checks),
        "threads": threads,
        "files": sorted(str(Path(f).relative_to(outdir)) for f in files) + ["manifest.json"],
    }
    write_json(outdir / "manifest.json", manifest)
    return outdir


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def format_scenario_list() -> str:
    rows = list_builtins()
    lines = []
    for name, anchor, required, desc in rows:
        label = f"{name}({', '.join(required)})" if required else name
        req = f"  [required: {', '.join(required)}]" if required else ""
        lines.append(f"{label:<28} anchor: {anchor}{req}\n{'':<28} {desc}")
    return "\n".join(lines)


def _parser():
    ap = argparse.ArgumentParser(prog="spde-lab", description="Parabolic SPDE experiments with Dirichlet data.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config (JSON file or built-in name)")
    run.add_argument("config")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--paths", type=int)
    run.add_argument("--resolution", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--threads", type=int)
    run.add_argument("--waive-checks", action="store_true")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    chk = sub.add_parser("check", help="run only the parabolicity and compatibility checks")
    chk.add_argument("config")
    chk.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return ap


def _fail(exc, code):
    payload = exc.to_dict() if isinstance(exc, SpdeLabError) else {"error": type(exc).__name__, "message": str(exc)}
    payload["exit_code"] = code
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            print(format_scenario_list())
            return 0
        if args.command == "check":
            _, sc = load_config(args.config, args.overrides)
            res = run_checks(sc, waive=True)
            print(json.dumps(res, indent=2, default=str))
            return 0 if res["passed"] else ContractViolation.exit_code
        outdir = run_scenario(args.config, args.overrides, paths=args.paths, resolution=args.resolution,
                              seed=args.seed, out=args.out, threads=args.threads,
                              waive_checks=args.waive_checks)
        print(str(outdir))
        return 0
    except SpdeLabError as exc:
        return _fail(exc, exc.exit_code)
    except Exception as exc:  # noqa: BLE001 - surface as machine-readable error
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
