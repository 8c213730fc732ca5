"""Named checks over scenarios and a parallel suite runner.

A suite manifest is ``{"checks": [{"check", "scenario", "params",
"tolerance", "expect"}]}``.  ``scenario`` is a built-in name, a path to a
scenario file, or an inline scenario object.  ``expect: "fail"`` marks a
constructed-violation fixture: its check must fail for the suite to pass.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import harness as H
from .drivers import Driver, GrowthParams, TerminalCondition
from .lattice import forward_residual, solve_backward
from .reflection import make_loss, solve_reflected
from .scenario import BUILTIN, Scenario, ScenarioError, builtin_scenario, load_scenario, parse_scenario

log = logging.getLogger(__name__)

__all__ = ["SuiteError", "CHECKS", "DEFAULT_SUITE", "run_suite", "load_suite", "resolve_scenario", "shifted_driver"]


class SuiteError(ValueError):
    pass


def resolve_scenario(ref, base: Path | None = None) -> Scenario:
    if isinstance(ref, dict):
        return parse_scenario(ref)
    if isinstance(ref, str):
        if ref in BUILTIN:
            return builtin_scenario(ref)
        path = Path(ref)
        if base is not None and not path.is_absolute():
            path = base / path
        if path.exists():
            return load_scenario(path)
    raise ScenarioError("/scenario", f"cannot resolve scenario {ref!r}")


def shifted_driver(d: Driver, c: float) -> Driver:
    """``f + c`` with ``alpha`` raised by ``|c|``."""
    g = d.growth
    growth = GrowthParams(g.beta, g.lam, g.c0, g.alpha_times, tuple(a + abs(c) for a in g.alpha_values))
    return replace(d, name=f"{d.name}+{c:g}", fn=lambda t, y, u, phi: d.fn(t, y, u, phi) + c, growth=growth, diagnostics={})


def _solve(s: Scenario, N=None, **over):
    opts = s.solver_opts()
    opts.update(over)
    return solve_backward(s.spec, s.driver, s.xi, s.grid(N), **opts)


def _growth(s: Scenario, params: dict) -> GrowthParams:
    g = s.driver.growth
    if "beta" in params or "lam" in params:
        g = replace(g, beta=params.get("beta", g.beta), lam=params.get("lam", g.lam))
    return g


def _seeds(s: Scenario, params: dict) -> list[int]:
    M = params.get("M")
    return list(range(M)) if M is not None else s.seeds()


# each runner: (scenario, params, tol) -> CheckReport


def _oracle(s, p, tol):
    return H.check_oracle(_solve(s, p.get("N")), s.driver, s.xi, tol)


def _residual(s, p, tol):
    f = _solve(s, p.get("N"))
    r = forward_residual(f, s.spec, s.driver, _seeds(s, p), p.get("quad_step", s.run["quad_step"]))
    return H.CheckReport("residual", r.mean_abs <= tol, r.mean_abs, None, {"M": r.M, "N": r.grid_N}, tol, {"stats": r.to_dict()})


def _apriori_y(s, p, tol):
    return H.check_apriori_y(_solve(s, p.get("N")), _growth(s, p), p.get("p_list", (1.0, 2.0)), tol)


def _submartingale(s, p, tol):
    return H.check_submartingale(_solve(s, p.get("N")), _growth(s, p), p.get("p", 1.0), tol)


def _apriori_u(s, p, tol):
    fields = [_solve(s, N) for N in p.get("grids", (1000, 10000))]
    return H.check_apriori_u(fields, _growth(s, p), p.get("p_list", (1.0, 2.0)), p.get("q_list", (1.0, 2.0)), range(p.get("M", 4000)), tol)


def _comparison(s, p, tol):
    c, dg = float(p.get("shift", 0.1)), float(p.get("terminal_shift", 0.0))
    xi2 = TerminalCondition(lambda counts: s.xi(counts) + dg, None, f"{s.xi.description}+{dg:g}")
    bound = c * float(s.spec.A_values[-1]) + dg + tol
    return H.check_comparison(s.spec, (s.driver, s.xi), (shifted_driver(s.driver, c), xi2), s.grid(p.get("N")), tol, upper_bound=bound, **s.solver_opts())


def _monotone(s, p, tol):
    from .drivers import SearchSpec

    search = SearchSpec(tol=tol) if tol is not None else SearchSpec()
    return H.check_monotone_regularization(s.spec, s.driver, s.xi, p.get("n_list", (2, 4, 8, 16)), s.grid(p.get("N")), search, **s.solver_opts())


def _truncation(s, p, tol):
    return H.check_terminal_truncation(s.spec, s.driver, s.xi, p.get("n_list", (2, 4, 8, 16)), s.grid(p.get("N")), **s.solver_opts())


def _L_lipschitz(s, p, tol):
    if "loss" in p:
        loss = make_loss(p["loss"], s.mean_terminal())
    elif s.loss is not None:
        loss = s.loss
    else:
        raise ScenarioError("/loss", "L_lipschitz needs a loss")
    return H.check_L_lipschitz(loss, p.get("trials", 1000), p.get("seed", 0), tol)


def _reflected(s, p):
    if s.loss is None:
        raise ScenarioError("/loss", "reflection needs a loss block")
    return solve_reflected(
        s.spec, s.driver, s.loss, s.xi, s.grid(p.get("N")),
        picard_tol=p.get("picard_tol", s.run["picard_tol"]), max_iter=p.get("max_iter", s.run["max_iter"]), **s.solver_opts()
    )


def _skorokhod(s, p, tol):
    sol = _reflected(s, p)
    K = sol.K.values * p["K_scale"] if "K_scale" in p else None
    return H.check_skorokhod(sol, s.loss, sol.laws, tol, K)


def _picard(s, p, tol):
    sol = _reflected(s, dict(p, picard_tol=min(tol, p.get("picard_tol", tol)) / 10))
    return H.check_picard(sol, tol, p.get("max_iter", 25))


def _martingale(s, p, tol):
    return H.check_martingale(_solve(s, p.get("N")), _seeds(s, p), p.get("quad_step", s.run["quad_step"]), tol)


def _compensator(s, p, tol):
    return H.check_compensator_identity(s.spec, _seeds(s, p), None, p.get("quad_step", s.run["quad_step"]), tol)


CHECKS = {
    "oracle": (_oracle, 1e-3),
    "residual": (_residual, 5e-3),
    "apriori_y": (_apriori_y, 1e-8),
    "submartingale": (_submartingale, 1e-8),
    "apriori_u": (_apriori_u, 0.05),
    "comparison": (_comparison, 1e-6),
    "monotone_regularization": (_monotone, 1e-11),
    "terminal_truncation": (_truncation, 0.0),
    "L_lipschitz": (_L_lipschitz, 1e-10),
    "skorokhod": (_skorokhod, 1e-8),
    "picard": (_picard, 1e-8),
    "martingale": (_martingale, 4.0),
    "compensator_identity": (_compensator, 4.0),
}

DEFAULT_SUITE = {
    "checks": [
        {"check": "oracle", "scenario": "canonical", "tolerance": 1e-3},
        {"check": "oracle", "scenario": "entropic", "tolerance": 2e-3},
        {"check": "residual", "scenario": "entropic", "params": {"M": 1000}, "tolerance": 5e-3},
        {"check": "comparison", "scenario": "entropic", "params": {"shift": 0.1}, "tolerance": 1e-6},
        {"check": "comparison", "scenario": "canonical", "params": {"shift": 0.0, "terminal_shift": 1.0}, "tolerance": 1e-6},
        {"check": "apriori_y", "scenario": "entropic_rk4", "params": {"p_list": [1, 2]}, "tolerance": 1e-8},
        {"check": "submartingale", "scenario": "entropic_rk4", "params": {"p": 1}, "tolerance": 1e-8},
        {"check": "apriori_y", "scenario": "understated_beta", "tolerance": 1e-8, "expect": "fail", "id": "apriori_y:understated_beta"},
        {"check": "submartingale", "scenario": "understated_beta", "tolerance": 1e-8, "expect": "fail", "id": "submartingale:understated_beta"},
        {"check": "apriori_u", "scenario": "entropic_rk4", "params": {"grids": [1000, 10000], "M": 4000}, "tolerance": 0.05},
        {"check": "monotone_regularization", "scenario": "regularization", "params": {"n_list": [2, 4, 8, 16]}, "tolerance": 1e-11},
        {"check": "terminal_truncation", "scenario": "unbounded", "params": {"n_list": [2, 4, 8, 16]}, "tolerance": 0.0},
        {"check": "L_lipschitz", "scenario": "binding", "params": {"loss": "sine:0,0.4", "trials": 1000}, "tolerance": 1e-10},
        {"check": "L_lipschitz", "scenario": "binding", "params": {"trials": 1000}, "tolerance": 1e-10, "id": "L_lipschitz:linear"},
        {"check": "skorokhod", "scenario": "binding", "tolerance": 1e-8},
        {"check": "skorokhod", "scenario": "slack", "tolerance": 1e-8},
        {"check": "skorokhod", "scenario": "binding", "params": {"K_scale": 0.5}, "tolerance": 1e-8, "expect": "fail", "id": "skorokhod:perturbed_K"},
        {"check": "picard", "scenario": "picard", "params": {"max_iter": 25}, "tolerance": 1e-8},
        {"check": "martingale", "scenario": "entropic", "params": {"M": 10000}, "tolerance": 4.0},
        {"check": "compensator_identity", "scenario": "canonical", "params": {"M": 10000}, "tolerance": 4.0},
    ]
}


def load_suite(path: str | Path) -> dict:
    if str(path) == "default":
        return DEFAULT_SUITE
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SuiteError(f"cannot read suite manifest: {exc}") from None


def _entries(manifest: dict) -> list[dict]:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("checks"), list):
        raise SuiteError("suite manifest needs a 'checks' list")
    entries = manifest["checks"]
    if not entries:
        raise SuiteError("no checks")
    out, seen = [], set()
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or e.get("check") not in CHECKS:
            raise SuiteError(f"/checks/{k}/check: unknown check {e.get('check') if isinstance(e, dict) else e!r}")
        extra = set(e) - {"check", "scenario", "params", "tolerance", "expect", "id"}
        if extra:
            raise SuiteError(f"/checks/{k}: unexpected keys {sorted(extra)}")
        if e.get("expect", "pass") not in ("pass", "fail"):
            raise SuiteError(f"/checks/{k}/expect: must be 'pass' or 'fail'")
        sid = e["scenario"] if isinstance(e.get("scenario"), str) else e.get("scenario", {}).get("name", "inline")
        ident = e.get("id") or f"{e['check']}:{sid}"
        while ident in seen:
            ident += "'"
        seen.add(ident)
        out.append(dict(e, id=ident))
    return out


def _run_one(entry: dict, base: str | None) -> dict:
    name, default_tol = entry["check"], CHECKS[entry["check"]][1]
    tol = entry.get("tolerance", default_tol)
    t0 = time.perf_counter()
    scen = resolve_scenario(entry.get("scenario", "canonical"), Path(base) if base else None)
    report = CHECKS[name][0](scen, entry.get("params", {}), tol)
    out = report.to_dict()
    expect = entry.get("expect", "pass")
    out.update(
        {
            "id": entry["id"],
            "scenario": scen.name,
            "scenario_hash": scen.digest(),
            "expect": expect,
            "ok": report.passed == (expect == "pass"),
            "seconds": round(time.perf_counter() - t0, 3),
        }
    )
    return out


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def run_suite(manifest: dict, jobs: int | None = None, base: str | Path | None = None) -> list[dict]:
    """Run every entry; reports come back sorted by id regardless of ``jobs``."""
    entries = _entries(manifest)
    jobs = default_jobs() if jobs is None else jobs
    base = str(base) if base else None
    if jobs <= 1 or len(entries) == 1:
        results = [_run_one(e, base) for e in entries]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(entries))) as pool:
            results = list(pool.map(_run_one, entries, [base] * len(entries)))
    return sorted(results, key=lambda r: r["id"])


def summary_rows(results: list[dict]):
    for r in results:
        yield r["id"], r["name"], r["scenario"], r["expect"], r["passed"], r["ok"], r["worst_margin"], r["tolerance"], r["seconds"]

