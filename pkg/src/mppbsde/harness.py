"""Property checks over lattice solutions.

Every check returns a :class:`CheckReport` whose ``worst_margin`` is signed
so that positive values are violations; a check passes iff the worst margin
does not exceed the tolerance stored in the report.  Conditional
inequalities are evaluated at every lattice node with the exact capped-chain
kernels, Monte Carlo is only used where a path functional has no finite
lattice recursion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .drivers import (
    CONVEX,
    Driver,
    GrowthParams,
    SamplePlan,
    SearchSpec,
    TerminalCondition,
    clamp_terminal,
    regularized_driver,
)
from .lattice import (
    LatticeModel,
    TimeGrid,
    ValueField,
    closed_form_zero_driver,
    entropic_closed_form,
    field_u_predictable,
    solve_backward,
)
from .mpp import CompensatorSpec, PredictableField, integral_nu, integral_p, simulate_path
from .reflection import LossFunction, ReflectedSolution, operator_L

log = logging.getLogger(__name__)

__all__ = [
    "CheckReport",
    "XiBound",
    "xi_bound",
    "check_apriori_y",
    "check_apriori_u",
    "check_submartingale",
    "check_comparison",
    "check_monotone_regularization",
    "check_terminal_truncation",
    "check_L_lipschitz",
    "u_functionals",
    "oracle_y0",
    "check_oracle",
    "check_martingale",
    "check_compensator_identity",
    "check_skorokhod",
    "check_picard",
]


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_margin: float
    location: dict | None
    params: dict
    tolerance: float
    artifacts: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            if isinstance(v, dict):
                return {str(k): plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return plain(
            {
                "name": self.name,
                "passed": self.passed,
                "worst_margin": self.worst_margin,
                "location": self.location,
                "params": self.params,
                "tolerance": self.tolerance,
                "artifacts": self.artifacts,
                "message": self.message,
            }
        )


def _report(name, margins_by_key: dict, tol: float, params: dict, artifacts=None, message="") -> CheckReport:
    """Fold ``{key: (margin, location)}`` into a report."""
    if not margins_by_key:
        return CheckReport(name, True, -math.inf, None, params, tol, artifacts or {}, message)
    key = max(margins_by_key, key=lambda k: margins_by_key[k][0])
    worst, loc = margins_by_key[key]
    loc = dict(loc or {}, key=key)
    passed = bool(worst <= tol)
    return CheckReport(name, passed, float(worst), loc, params, tol, artifacts or {}, message)


def _argmax2(a: np.ndarray) -> dict:
    i, s = np.unravel_index(int(np.argmax(a)), a.shape)
    return {"layer": int(i), "state": int(s)}


def _log_matvec(matrix, log_values: np.ndarray) -> np.ndarray:
    m = log_values.max()
    with np.errstate(divide="ignore"):
        return np.log(matrix @ np.exp(log_values - m)) + m


# ----------------------------------------------------------- a priori bounds


@dataclass
class XiBound:
    """``E[exp(p lam e^{beta A_T} |xi| + p lam int_0^T e^{beta A} alpha dA)]``.

    ``log_conditional[i, s]`` is the log of the layer-``i`` conditional
    version with the integral started at ``t_i``.
    """

    p: float
    growth: GrowthParams
    value: float
    log_conditional: np.ndarray


def _log_rhs(model: LatticeModel, terminal: np.ndarray, growth: GrowthParams, p: float) -> np.ndarray:
    spec, grid = model.spec, model.grid
    lam, beta = growth.lam, growth.beta
    A_T = float(spec.A(grid.times[-1]))
    log_term = p * lam * math.exp(beta * A_T) * np.abs(terminal)
    cond = model.log_expect_backward(log_term)
    W = np.array([growth.weighted_alpha_integral(spec, t, grid.times[-1]) for t in grid.times])
    return cond + p * lam * W[:, None]


def xi_bound(p: float, growth: GrowthParams, spec: CompensatorSpec, xi: TerminalCondition, grid: TimeGrid, model: LatticeModel | None = None) -> XiBound:
    model = model or LatticeModel(spec, grid)
    cond = _log_rhs(model, xi(model.states.counts), growth, p)
    return XiBound(p, growth, float(math.exp(cond[0, 0])), cond)


def check_apriori_y(field: ValueField, growth: GrowthParams, p_list=(1.0, 2.0), tol: float = 1e-8) -> CheckReport:
    """``exp(p lam |y_t|) <= E_t[exp(p lam e^{beta A_T}|xi| + p lam int_t^T e^{beta A} alpha dA)]``.

    Compared in logs: the margin is ``log LHS - log RHS`` and the slack
    ``1 + tol`` becomes ``log1p(tol)``.
    """
    model = field.model
    margins, curves = {}, {}
    for p in p_list:
        rhs = _log_rhs(model, field.y[-1], growth, p)
        lhs = p * growth.lam * np.abs(field.y)
        gap = lhs - rhs
        margins[f"p={p:g}"] = (float(gap.max()), _argmax2(gap))
        curves[f"p={p:g}"] = gap.max(axis=1)
    slack = math.log1p(tol)
    rep = _report(
        "apriori_y",
        margins,
        slack,
        {"p_list": list(p_list), "beta": growth.beta, "lam": growth.lam, "rel_tol": tol},
        {"max_log_gap_per_layer": curves},
    )
    return rep


def check_submartingale(field: ValueField, growth: GrowthParams, p: float = 1.0, tol: float = 1e-8) -> CheckReport:
    """One-step check ``E_i[e^{p G_{i+1}}] >= e^{p G_i}`` with
    ``G_t = e^{beta A_t} lam |y_t| + lam int_0^t e^{beta A} alpha dA``.

    The margin is ``p G_i - log E_i[e^{p G_{i+1}}]`` (relative slack).
    """
    model, grid, spec = field.model, field.grid, field.model.spec
    lam, beta = growth.lam, growth.beta
    A = spec.A(grid.times)
    W = np.array([growth.weighted_alpha_integral(spec, grid.times[0], t) for t in grid.times])
    G = p * (np.exp(beta * A)[:, None] * lam * np.abs(field.y) + lam * W[:, None])
    gaps = np.empty((grid.N, field.states.size))
    for i in range(grid.N):
        gaps[i] = G[i] - _log_matvec(model.matrices[i], G[i + 1])
    return _report(
        "submartingale",
        {f"p={p:g}": (float(gaps.max()), _argmax2(gaps))},
        math.log1p(tol),
        {"p": p, "beta": beta, "lam": lam, "rel_tol": tol},
        {"max_log_gap_per_layer": gaps.max(axis=1)},
    )


def _cap_counts(counts: np.ndarray, n_max: int) -> np.ndarray:
    """Project counts with total above ``n_max`` onto the lattice boundary."""
    counts = np.array(counts)
    over = counts.sum(axis=1) - n_max
    for r in np.flatnonzero(over > 0):
        for _ in range(int(over[r])):
            counts[r, np.argmax(counts[r])] -= 1
    return counts


def _path_sums(field: ValueField, table: np.ndarray, paths) -> np.ndarray:
    """``sum_i table[i, N_{t_i}] dA_i`` along the given paths.

    The state is constant between events, so each path contributes one
    difference of per-state cumulative sums per segment.
    """
    grid, states = field.grid, field.states
    C = np.vstack([np.zeros(states.size), np.cumsum(table * grid.dA[:, None], axis=0)])
    left = grid.times[:-1]
    out = np.empty(len(paths))
    for k, path in enumerate(paths):
        cuts = np.searchsorted(left, path.times, side="left")
        bounds = np.concatenate([[0], cuts, [grid.N]])
        counts = np.vstack([np.zeros((1, states.K), int), path.cumulative_counts()[1:]])
        idx = states.index(_cap_counts(counts, states.n_max))
        out[k] = float(np.sum(C[bounds[1:], idx] - C[bounds[:-1], idx]))
    return out


def _moment(field: ValueField, table: np.ndarray, power: int) -> float:
    """``E[(sum_i table[i, N_{t_i}] dA_i)^power]`` by the binomial recursion."""
    grid, model = field.grid, field.model
    S = field.states.size
    V = np.zeros((S, power + 1))
    V[:, 0] = 1.0
    binom = [[comb(k, l, exact=True) for l in range(k + 1)] for k in range(power + 1)]
    for i in range(grid.N - 1, -1, -1):
        a = table[i] * grid.dA[i]
        nxt = model.matrices[i] @ V
        new = np.empty_like(V)
        for k in range(power + 1):
            new[:, k] = sum(binom[k][l] * a**l * nxt[:, k - l] for l in range(k + 1))
        V = new
    return float(V[0, power])


def _functional(field: ValueField, table: np.ndarray, power: float, paths) -> tuple[float, str]:
    if float(power).is_integer():
        return _moment(field, table, int(power)), "lattice"
    if paths is None:
        raise ValueError("fractional power needs Monte Carlo paths")
    return float(np.mean(_path_sums(field, table, paths) ** power)), "monte_carlo"


def _u_tables(field: ValueField, lam: float, q: float):
    phis = field.model.phis[:, None, :]
    h1 = np.sum(phis * field.u**2, axis=-1)
    h2 = np.sum(phis * np.expm1(q * lam * np.abs(field.u)) ** 2, axis=-1)
    return h1, h2


def u_functionals(field: ValueField, lam: float, p: float, q: float, seeds=None, paths=None) -> dict:
    """``E[(int |U|^2 phi dA)^{p/2}]`` and ``E[(int (e^{q lam |U|}-1)^2 phi dA)^p]``.

    Integer powers use the exact lattice moment recursion; other powers fall
    back to a Monte Carlo average over ``paths`` (or paths simulated from
    ``seeds``), which should be shared across grids.
    """
    if paths is None and seeds is not None:
        paths = [simulate_path(field.model.spec, int(s)) for s in seeds]
    h1, h2 = _u_tables(field, lam, q)
    return {"U2": _functional(field, h1, p / 2.0, paths), "expU": _functional(field, h2, p, paths)}


def check_apriori_u(fields, growth: GrowthParams, p_list=(1.0, 2.0), q_list=(1.0, 2.0), seeds=range(4000), rel_tol: float = 0.05) -> CheckReport:
    """Finiteness and grid stability of the two U-functionals.

    ``fields`` are solutions on successively finer grids; stability compares
    the two finest.  The multiplicative constant of the bound is not asserted.
    """
    if len(fields) < 2:
        raise ValueError("need at least two grids")
    seeds = list(seeds)
    paths = None
    if any(not float(p / 2.0).is_integer() for p in p_list):
        paths = [simulate_path(fields[0].model.spec, s) for s in seeds]
    table, margins = {}, {}

    def record(name, series, method):
        table[name] = {"values": series, "method": method, "grids": [f.grid.N for f in fields]}
        if not all(np.isfinite(series)):
            margins[name] = (math.inf, {"grid": int(np.argmin(np.isfinite(series)))})
            return
        a, b = series[-2], series[-1]
        scale = max(abs(a), abs(b))
        change = 0.0 if scale == 0 else abs(b - a) / scale
        margins[name] = (change - rel_tol, {"grids": [fields[-2].grid.N, fields[-1].grid.N]})

    for p in p_list:
        vals = [_functional(f, _u_tables(f, growth.lam, 1.0)[0], p / 2.0, paths) for f in fields]
        record(f"U2(p={p:g})", [v[0] for v in vals], vals[-1][1])
        for q in q_list:
            vals = [_functional(f, _u_tables(f, growth.lam, q)[1], p, paths) for f in fields]
            record(f"expU(p={p:g},q={q:g})", [v[0] for v in vals], vals[-1][1])
    rep = _report("apriori_u", margins, 0.0, {"p_list": list(p_list), "q_list": list(q_list), "rel_tol": rel_tol, "M": len(seeds)}, {"functionals": table})
    return rep


# ----------------------------------------------------------- comparison


def _hypothesis_margin(d: Driver, d2: Driver, xi, xi2, states, plan: SamplePlan) -> tuple[float, float]:
    t, y, u, _, phis = plan.draw(states.K)
    f1 = np.array([d.scalar(ti, yi, ui, ph) for ti, yi, ui, ph in zip(t, y[0], u[0], phis)])
    f2 = np.array([d2.scalar(ti, yi, ui, ph) for ti, yi, ui, ph in zip(t, y[0], u[0], phis)])
    g1, g2 = xi(states.counts), xi2(states.counts)
    return float(np.max(f1 - f2)), float(np.max(g1 - g2))


def check_comparison(
    spec: CompensatorSpec,
    first: tuple[Driver, TerminalCondition],
    second: tuple[Driver, TerminalCondition],
    grid: TimeGrid,
    tol: float = 1e-6,
    plan: SamplePlan | None = None,
    model: LatticeModel | None = None,
    upper_bound: float | None = None,
    **solver_opts,
) -> CheckReport:
    """``f <= f'`` and ``g <= g'`` imply ``y <= y'`` at every node.

    The hypothesis is sampled first; re-solving the first pair must
    reproduce its field bit for bit.  ``upper_bound`` additionally caps
    ``y' - y`` (e.g. ``c A(T)`` for a constant shift ``c``).
    """
    (d, xi), (d2, xi2) = first, second
    model = model or LatticeModel(spec, grid, solver_opts.pop("n_max", None))
    plan = plan or SamplePlan(n_samples=500, seed=11)
    hf, hg = _hypothesis_margin(d, d2, xi, xi2, model.states, plan)
    params = {"first": d.name, "second": d2.name, "tol": tol}
    if hf > 0 or hg > 0:
        return CheckReport("comparison", False, max(hf, hg), {"key": "hypothesis"}, params, tol, {}, "hypothesis unmet")
    y1 = solve_backward(spec, d, xi, grid, model=model, **solver_opts)
    y1b = solve_backward(spec, d, xi, grid, model=model, **solver_opts)
    y2 = solve_backward(spec, d2, xi2, grid, model=model, **solver_opts)
    diff = y1.y - y2.y
    repro = bool(np.array_equal(y1.y, y1b.y) and np.array_equal(y1.u, y1b.u))
    margins = {"order": (float(diff.max()), _argmax2(diff))}
    if not repro:
        margins["reproducible"] = (math.inf, None)
    gap = y2.y - y1.y
    if upper_bound is not None:
        over = gap - upper_bound
        margins["upper"] = (float(over.max()), _argmax2(over))
        params["upper_bound"] = upper_bound
    return _report(
        "comparison",
        margins,
        tol,
        params,
        {"gap_min": float(gap.min()), "gap_max": float(gap.max()), "gap_y0": float(gap[0, 0]), "reproducible": repro},
    )


# ------------------------------------------------------- regularization


def check_monotone_regularization(
    spec: CompensatorSpec,
    d: Driver,
    xi: TerminalCondition,
    n_list,
    grid: TimeGrid,
    search: SearchSpec | None = None,
    model: LatticeModel | None = None,
    **solver_opts,
) -> CheckReport:
    """``y^n`` nondecreasing in ``n`` at every node and ``||y^n - y||`` shrinking.

    The tolerance is the inf-convolution search tolerance; evaluations whose
    search hit the iteration cap widen it by a factor ten each.
    """
    search = search or SearchSpec()
    n_list = [float(n) for n in n_list]
    params = {"driver": d.name, "n_list": n_list, "search_tol": search.tol}
    if d.convexity != CONVEX or n_list != sorted(n_list) or n_list[0] <= d.growth.c0:
        return CheckReport("monotone_regularization", False, math.inf, {"key": "hypothesis"}, params, search.tol, {}, "hypothesis unmet")
    model = model or LatticeModel(spec, grid, solver_opts.pop("n_max", None))
    base = solve_backward(spec, d, xi, grid, model=model, **solver_opts)
    ys, gaps, degraded = [], [], 0
    for n in n_list:
        dn = regularized_driver(d, n, search)
        fld = solve_backward(spec, dn, xi, grid, model=model, **solver_opts)
        degraded += dn.diagnostics["degraded"]
        ys.append(fld.y)
        gaps.append(float(np.max(np.abs(fld.y - base.y))))
    tol = search.tol * (10.0**degraded if degraded < 10 else math.inf)
    margins = {}
    for k in range(len(ys) - 1):
        drop = ys[k] - ys[k + 1]
        margins[f"monotone n={n_list[k]:g}->{n_list[k + 1]:g}"] = (float(drop.max()), _argmax2(drop))
    for k in range(len(gaps) - 1):
        margins[f"gap n={n_list[k]:g}->{n_list[k + 1]:g}"] = (gaps[k + 1] - gaps[k], None)
    if len(gaps) > 1:
        # strict overall decrease
        margins["gap first>last"] = (math.inf if gaps[-1] >= gaps[0] else -math.inf, None)
    return _report("monotone_regularization", margins, tol, params, {"gaps": gaps, "degraded": degraded, "y0": [y[0, 0] for y in ys], "y0_base": base.y0()})


def check_terminal_truncation(spec: CompensatorSpec, d: Driver, xi: TerminalCondition, n_list, grid: TimeGrid, model: LatticeModel | None = None, **solver_opts) -> CheckReport:
    """``||Y(clamp(xi, n)) - Y(xi)||_inf`` nonincreasing along ``n_list`` and
    strictly smaller at the end."""
    model = model or LatticeModel(spec, grid, solver_opts.pop("n_max", None))
    base = solve_backward(spec, d, xi, grid, model=model, **solver_opts)
    errs, errs0 = [], []
    for n in n_list:
        fld = solve_backward(spec, d, clamp_terminal(xi, n), grid, model=model, **solver_opts)
        errs.append(float(np.max(np.abs(fld.y - base.y))))
        errs0.append(abs(fld.y0() - base.y0()))
    margins = {f"n={n_list[k]:g}->{n_list[k + 1]:g}": (errs[k + 1] - errs[k], None) for k in range(len(errs) - 1)}
    if len(errs) > 1:
        margins["first>last"] = (math.inf if errs[-1] >= errs[0] else -math.inf, None)
    return _report("terminal_truncation", margins, 0.0, {"n_list": list(n_list)}, {"sup_errors": errs, "y0_errors": errs0})


# --------------------------------------------------------------- L_t


def check_L_lipschitz(loss: LossFunction, trials: int = 1000, seed: int = 0, bisection_tol: float = 1e-10, support: int = 8, scale: float = 3.0, t: float = 0.5) -> CheckReport:
    """``|L(eta) - L(eta')| <= kappa E|eta - eta'| + 2 bisection_tol`` on
    random coupled discrete laws (shared weights, independent values)."""
    rng = np.random.default_rng(seed)
    worst, where = -math.inf, None
    violations = 0
    for k in range(trials):
        w = rng.dirichlet(np.ones(support))
        v = rng.normal(-1.0, scale, support)
        v2 = v + rng.normal(0.0, scale / 2, support) * (rng.random() < 0.9)
        L1 = operator_L(loss, t, v, w, bisection_tol)
        L2 = operator_L(loss, t, v2, w, bisection_tol)
        m = abs(L1 - L2) - loss.kappa * float(np.dot(w, np.abs(v - v2))) - 2 * bisection_tol
        violations += m > 0
        if m > worst:
            worst, where = m, {"trial": k}
    return _report(
        "L_lipschitz",
        {"lipschitz": (worst, where)},
        0.0,
        {"loss": loss.name, "kappa": loss.kappa, "trials": trials, "seed": seed, "bisection_tol": bisection_tol},
        {"violations": int(violations)},
    )


# ------------------------------------------------------------- oracles


def oracle_y0(spec: CompensatorSpec, driver: Driver, xi: TerminalCondition) -> float | None:
    """Closed-form ``Y_0`` for drivers with a registered oracle, else None."""
    kind, _, arg = driver.name.partition(":")
    if kind == "zero":
        return closed_form_zero_driver(spec, xi, 0.0, np.zeros(spec.K, int))
    if kind == "entropic":
        return entropic_closed_form(spec, xi, float(arg), 0.0, np.zeros(spec.K, int))
    if kind == "constant":
        return closed_form_zero_driver(spec, xi, 0.0, np.zeros(spec.K, int)) + float(arg) * float(spec.A_values[-1])
    return None


def check_oracle(field: ValueField, driver: Driver, xi: TerminalCondition, tol: float) -> CheckReport:
    spec = field.model.spec
    ref = oracle_y0(spec, driver, xi)
    params = {"driver": driver.name, "N": field.grid.N, "scheme": field.scheme}
    if ref is None:
        return CheckReport("oracle", False, math.inf, None, params, tol, {}, "no registered oracle")
    err = abs(field.y0() - ref)
    return _report("oracle", {"y0": (err, {"layer": 0, "state": 0})}, tol, params, {"y0": field.y0(), "oracle": ref, "abs_error": err})


# ----------------------------------------------------------- martingales


def _within_sigmas(name: str, samples: dict, sigmas: float, params: dict) -> CheckReport:
    """Each sample mean must lie within ``sigmas`` standard errors of zero.

    The margin is ``|mean| / stderr - sigmas``; a degenerate sample with zero
    spread must have mean exactly zero.
    """
    margins, stats = {}, {}
    for key, x in samples.items():
        x = np.asarray(x, dtype=float)
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        z = abs(mean) / se if se > 0 else (0.0 if abs(mean) < 1e-13 else math.inf)
        margins[key] = (z - sigmas, None)
        stats[key] = {"mean": mean, "stderr": se, "z": z, "M": int(x.size)}
    return _report(name, margins, 0.0, dict(params, sigmas=sigmas), {"stats": stats})


def check_martingale(field: ValueField, seeds, quad_step: float = 0.01, sigmas: float = 4.0) -> CheckReport:
    """Sample mean of ``int int U dq`` within ``sigmas`` standard errors of 0."""
    spec = field.model.spec
    Uf = field_u_predictable(field)
    vals = []
    for seed in seeds:
        path = simulate_path(spec, int(seed))
        vals.append(integral_p(path, Uf) - integral_nu(spec, Uf, path, quad_step))
    return _within_sigmas("martingale", {"int_U_dq": vals}, sigmas, {"quad_step": quad_step})


def default_integrands(spec: CompensatorSpec) -> dict:
    """Three test integrands: constant, deterministic in time and mark, and
    history dependent."""
    T = spec.T

    def timed(t, counts, mark):
        return np.cos(np.pi * np.asarray(t) / T) + 0.5 * mark

    def history(t, counts, mark):
        return 1.0 / (1.0 + np.asarray(counts).sum(axis=-1))

    return {
        "one": PredictableField.constant(1.0),
        "cos_time_mark": PredictableField(timed, vectorized=True),
        "inverse_count": PredictableField(history, vectorized=True),
    }


def check_compensator_identity(spec: CompensatorSpec, seeds, integrands: dict | None = None, quad_step: float = 0.01, sigmas: float = 4.0) -> CheckReport:
    """``E[int int H dp] = E[int int H dnu]``, tested per integrand as a
    zero-mean statistic."""
    integrands = integrands or default_integrands(spec)
    samples = {k: [] for k in integrands}
    for seed in seeds:
        path = simulate_path(spec, int(seed))
        for k, H in integrands.items():
            samples[k].append(integral_p(path, H) - integral_nu(spec, H, path, quad_step))
    return _within_sigmas("compensator_identity", samples, sigmas, {"quad_step": quad_step, "integrands": sorted(integrands)})


# ------------------------------------------------------------ reflection


def check_skorokhod(sol: ReflectedSolution, loss: LossFunction, laws, tol: float = 1e-8, K_values=None) -> CheckReport:
    """Constraint ``E[l(t_i, Y_i)] >= -tol``, flatness and monotone ``K``.

    ``K_values`` replaces the solver's compensator; ``Y`` is then rebuilt as
    ``y + K_T - K_t + R_T`` so that a perturbed ``K`` is tested consistently.
    """
    from .reflection import FlatCompensator

    grid = laws.grid
    K = sol.K if K_values is None else FlatCompensator(grid.times, np.asarray(K_values, dtype=float))
    Y = sol.y_field.y + (K.values[-1] - K.values + sol.R[-1])[:, None]
    margins = np.array([math.fsum(laws.probs[i] * loss(t, Y[i])) for i, t in enumerate(grid.times)])
    dK = np.diff(K.values)
    flat = math.fsum(margins[:-1] * dK)
    m = {
        "constraint": (float(-margins.min()), {"layer": int(np.argmin(margins))}),
        "flatness": (abs(flat), None),
        "monotone_K": (float(-dK.min(initial=0.0)), None),
        "K_start": (abs(float(K.values[0])), None),
    }
    return _report(
        "skorokhod",
        m,
        tol,
        {"loss": loss.name, "perturbed": K_values is not None},
        {"min_margin": float(margins.min()), "flatness": float(flat), "K_T": float(K.values[-1]), "K": K.values},
    )


def check_picard(sol: ReflectedSolution, tol: float = 1e-8, max_iter: int = 25) -> CheckReport:
    """Strictly decreasing iterate distances reaching ``tol`` within
    ``max_iter`` iterations, with the horizon guarantee set."""
    trace = list(sol.trace)
    hit = next((k + 1 for k, d in enumerate(trace) if d < tol), None)
    inc = max((trace[k + 1] - trace[k] for k in range(len(trace) - 1)), default=-math.inf)
    m = {
        "strict_decrease": (math.inf if inc >= 0 else -math.inf, None),
        "reached_tol": (-math.inf if hit is not None and hit <= max_iter else math.inf, None),
        "guaranteed": (-math.inf if sol.diagnostics.get("guaranteed") else math.inf, None),
    }
    return _report(
        "picard",
        m,
        0.0,
        {"tol": tol, "max_iter": max_iter},
        {"trace": trace, "iterations_to_tol": hit, "horizon_h": sol.diagnostics.get("horizon_h"), "windows": sol.diagnostics.get("horizon_windows")},
    )
