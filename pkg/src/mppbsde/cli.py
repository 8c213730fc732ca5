"""Command line front end: simulate, solve, reflect, verify, convergence.

Exit codes: 0 ok, 1 check failure, 2 validation error, 3 numerical error.
Every run writes ``manifest.json`` listing each output file with its
SHA-256 digest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .harness import check_skorokhod, oracle_y0
from .lattice import ContractionError, LatticeError, forward_residual, solve_backward
from .mpp import SpecError, paths_to_rows, simulate_paths
from .reflection import solve_reflected
from .scenario import Scenario, ScenarioError
from .suite import SuiteError, default_jobs, load_suite, resolve_scenario, run_suite, summary_rows

log = logging.getLogger("mppbsde")

EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


def tool_version() -> str:
    try:
        return metadata.version("mppbsde")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        from . import __version__

        return __version__


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    scenario_hash: str | None
    tool_version: str
    seeds: list
    files: list = field(default_factory=list)
    wall_clock: float = 0.0
    check_summary: dict = field(default_factory=dict)

    def add(self, path: Path, out: Path) -> None:
        self.files.append({"path": str(path.relative_to(out)), "sha256": sha256(path), "bytes": path.stat().st_size})

    def write(self, out: Path) -> Path:
        self.files.sort(key=lambda f: f["path"])
        return write_json(out / "manifest.json", asdict(self))


def _seed_summary(seeds: list[int]) -> list:
    """Contiguous seed ranges as ``[start, stop)`` pairs; compact for large runs."""
    out = []
    for s in seeds:
        if out and out[-1][1] == s:
            out[-1][1] = s + 1
        else:
            out.append([s, s + 1])
    return out


# ---------------------------------------------------------------- commands


def cmd_simulate(scen: Scenario, out: Path, jobs: int = 1, seed_offset: int = 0, tol: float | None = None) -> RunManifest:
    from .plotting import plot_counts

    seeds = scen.seeds(seed_offset)
    man = RunManifest("simulate", scen.digest(), tool_version(), _seed_summary(seeds))
    paths = simulate_paths(scen.spec, seeds, jobs)
    man.add(write_csv(out / "paths.csv", ["seed", "event_time", "mark_index"], paths_to_rows(paths, seeds)), out)
    counts = np.array([p.counts_at(scen.spec.T) for p in paths]).reshape(len(paths), scen.spec.K)
    expected = scen.spec.phi_average(0.0, scen.spec.T) * float(scen.spec.A_values[-1])
    M = len(paths)
    emp = counts.mean(axis=0) if M else np.zeros(scen.spec.K)
    se = np.sqrt(np.maximum(expected, 0.0) / max(M, 1))
    z = np.where(se > 0, (emp - expected) / np.where(se > 0, se, 1.0), 0.0)
    stats = {
        "M": M,
        "events": int(counts.sum()),
        "marks": list(scen.data["compensator"]["marks"]),
        "empirical_mean": emp,
        "compensator_mean": expected,
        "empirical_var": counts.var(axis=0, ddof=1) if M > 1 else np.zeros(scen.spec.K),
        "z_score": z,
    }
    man.add(write_json(out / "stats.json", stats), out)
    man.add(plot_counts(counts.sum(axis=1), float(expected.sum()), out / "counts.png"), out)
    man.check_summary = {"max_abs_z": float(np.abs(z).max(initial=0.0))}
    return man


def cmd_solve(scen: Scenario, out: Path, jobs: int = 1, seed_offset: int = 0, tol: float | None = None) -> RunManifest:
    from .plotting import plot_value_field

    grid = scen.grid()
    fld = solve_backward(scen.spec, scen.driver, scen.xi, grid, **scen.solver_opts())
    K = scen.spec.K
    header = ["t", *[f"n{k + 1}" for k in range(K)], "y", *[f"u{k + 1}" for k in range(K)]]
    seeds = scen.seeds(seed_offset)[: scen.run["M"]] if scen.run["M"] > 0 else []
    man = RunManifest("solve", scen.digest(), tool_version(), _seed_summary(seeds))
    man.add(write_csv(out / "value_field.csv", header, fld.csv_rows()), out)
    summary = {"y0": fld.y0(), "diagnostics": fld.diagnostics, "scheme": fld.scheme, "N": grid.N}
    if seeds:
        res = forward_residual(fld, scen.spec, scen.driver, seeds, scen.run["quad_step"])
        man.add(write_json(out / "residual.json", res.to_dict()), out)
        summary["residual_mean_abs"] = res.mean_abs
    ref = oracle_y0(scen.spec, scen.driver, scen.xi)
    if ref is not None:
        tol = 1e-3 if tol is None else tol
        diff = abs(fld.y0() - ref)
        man.add(write_json(out / "oracle.json", {"y0": fld.y0(), "oracle": ref, "abs_diff": diff, "tol": tol, "within_tol": diff < tol}), out)
        summary["oracle_abs_diff"] = diff
    man.add(write_json(out / "summary.json", summary), out)
    man.add(plot_value_field(grid.times, fld.y, fld.states.totals, out / "value_field.png"), out)
    man.check_summary = {k: v for k, v in summary.items() if k != "diagnostics"}
    return man


def cmd_reflect(scen: Scenario, out: Path, jobs: int = 1, seed_offset: int = 0, tol: float | None = None) -> RunManifest:
    from .plotting import plot_reflection

    if scen.loss is None:
        raise ScenarioError("/loss", "reflect needs a loss block")
    tol = 1e-8 if tol is None else tol
    grid = scen.grid()
    sol = solve_reflected(
        scen.spec, scen.driver, scen.loss, scen.xi, grid,
        picard_tol=scen.run["picard_tol"], max_iter=scen.run["max_iter"], **scen.solver_opts()
    )
    rep = check_skorokhod(sol, scen.loss, sol.laws, tol)
    margins = np.array([math.fsum(sol.laws.probs[i] * scen.loss(t, sol.Y[i])) for i, t in enumerate(grid.times)])
    man = RunManifest("reflect", scen.digest(), tool_version(), [])
    man.add(write_csv(out / "K.csv", ["t", "K", "L", "R"], zip(grid.times, sol.K.values, sol.L, sol.R)), out)
    man.add(write_csv(out / "margins.csv", ["t", "margin"], zip(grid.times, margins)), out)
    picard = {
        "trace": sol.trace,
        "converged": sol.converged,
        "guaranteed": sol.diagnostics["guaranteed"],
        "horizon_h": sol.diagnostics["horizon_h"],
        "horizon_windows": sol.diagnostics["horizon_windows"],
        "skorokhod": rep.to_dict() | {"artifacts": {k: v for k, v in rep.artifacts.items() if k != "K"}},
    }
    man.add(write_json(out / "picard.json", picard), out)
    man.add(plot_reflection(grid.times, sol.K.values, margins, out / "reflection.png"), out)
    man.check_summary = {"skorokhod_passed": rep.passed, "guaranteed": sol.diagnostics["guaranteed"], "iterations": len(sol.trace)}
    return man


def fit_order(dts, errors, floor: float = 1e-12) -> float | None:
    """Least-squares slope of ``log error`` on ``log dt`` over rows above ``floor``."""
    dts, errors = np.asarray(dts, float), np.asarray(errors, float)
    keep = errors > floor
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(dts[keep]), np.log(errors[keep]), 1)[0])


def cmd_convergence(scen: Scenario, out: Path, grids, jobs: int = 1, tol: float | None = None) -> RunManifest:
    from .plotting import plot_convergence

    ref = oracle_y0(scen.spec, scen.driver, scen.xi)
    rows = []
    for N in grids:
        fld = solve_backward(scen.spec, scen.driver, scen.xi, scen.grid(N), **scen.solver_opts())
        dt = scen.spec.T / N
        err = abs(fld.y0() - ref) if ref is not None else float("nan")
        rows.append((N, dt, fld.y0(), ref if ref is not None else float("nan"), err))
    order = fit_order([r[1] for r in rows], [r[4] for r in rows]) if ref is not None else None
    min_order = 0.9 if tol is None else tol
    man = RunManifest("convergence", scen.digest(), tool_version(), [])
    man.add(write_csv(out / "convergence.csv", ["N", "dt", "y0", "oracle", "abs_error"], rows), out)
    result = {
        "order": order,
        "min_order": min_order,
        "oracle": ref,
        "order_ok": None if order is None else order >= min_order,
        "note": None if order is not None or ref is None else "errors at round-off level or a single grid: no order fitted",
    }
    man.add(write_json(out / "convergence.json", result), out)
    man.add(plot_convergence([r[1] for r in rows], [r[4] for r in rows], out / "convergence.png", order), out)
    man.check_summary = result
    return man


def cmd_verify(manifest: dict, out: Path, jobs: int | None = None, base=None) -> tuple[RunManifest, bool]:
    from .plotting import plot_suite

    results = run_suite(manifest, jobs, base)
    man = RunManifest("verify", None, tool_version(), [])
    for r in results:
        name = r["id"].replace(":", "__").replace("'", "_")
        man.add(write_json(out / f"check_{name}.json", r), out)
    header = ["id", "check", "scenario", "expect", "passed", "ok", "worst_margin", "tolerance", "seconds"]
    man.add(write_csv(out / "summary.csv", header, summary_rows(results)), out)
    man.add(
        plot_suite(
            [r["id"] for r in results],
            [r["worst_margin"] if isinstance(r["worst_margin"], (int, float)) else math.inf for r in results],
            [r["tolerance"] for r in results],
            [r["ok"] for r in results],
            out / "suite.png",
        ),
        out,
    )
    ok = all(r["ok"] for r in results)
    man.check_summary = {
        "all_ok": ok,
        "checks": len(results),
        "expected_fail": [r["id"] for r in results if r["expect"] == "fail"],
        "unexpected": [r["id"] for r in results if not r["ok"]],
    }
    return man, ok


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mppbsde", description="BSDE solvers driven by marked point processes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="scenario JSON file or built-in name")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--jobs", type=int, default=None, help="worker pool size (default: available CPUs)")
        sp.add_argument("--seed-offset", type=int, default=0)
        sp.add_argument("--tol", type=float, default=None)

    for name in ("simulate", "solve", "reflect"):
        common(sub.add_parser(name))
    conv = sub.add_parser("convergence")
    common(conv)
    conv.add_argument("--grids", default="100,1000,10000", help="comma-separated step counts")
    ver = sub.add_parser("verify")
    common(ver, scenario=False)
    ver.add_argument("--suite", default="default", help="suite manifest JSON, or 'default'")
    return p


def _setup_logging() -> None:
    level = os.environ.get("MPPBSDE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    out: Path = args.out
    jobs = default_jobs() if args.jobs is None else max(1, args.jobs)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            suite_path = args.suite
            manifest = load_suite(suite_path)
            base = None if suite_path == "default" else Path(suite_path).parent
            man, ok = cmd_verify(manifest, out, jobs, base)
            code = EXIT_OK if ok else EXIT_CHECK
        else:
            scen = resolve_scenario(args.scenario)
            if args.command == "simulate":
                man = cmd_simulate(scen, out, jobs, args.seed_offset, args.tol)
            elif args.command == "solve":
                man = cmd_solve(scen, out, jobs, args.seed_offset, args.tol)
            elif args.command == "reflect":
                man = cmd_reflect(scen, out, jobs, args.seed_offset, args.tol)
                code = EXIT_OK if man.check_summary["skorokhod_passed"] else EXIT_CHECK
            else:
                try:
                    grids = [int(g) for g in args.grids.split(",") if g.strip()]
                except ValueError:
                    raise ScenarioError("/grids", f"not a list of integers: {args.grids!r}") from None
                if not grids or min(grids) < 1:
                    raise ScenarioError("/grids", "need at least one positive step count")
                man = cmd_convergence(scen, out, grids, jobs, args.tol)
                code = EXIT_CHECK if man.check_summary["order_ok"] is False else EXIT_OK
    except (ScenarioError, SuiteError, SpecError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ContractionError, LatticeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    man.wall_clock = round(time.perf_counter() - t0, 3)
    man.write(out)
    print(json.dumps(_jsonable(man.check_summary), sort_keys=True))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
