"""Mean reflection with a deterministic flat compensator ``K``.

The constraint ``E[l(t, Y_t)] >= 0`` is enforced through the shift operator
``L_t(eta) = inf{x >= 0 : E[l(t, x + eta)] >= 0}``; the reflected solution is
``Y_t = y_t + sup_{s >= t} L_s(y_s)`` with ``K_t = R_0 - R_t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import Driver, TerminalCondition
from .lattice import LawTable, LatticeModel, TimeGrid, ValueField, forward_law, solve_backward
from .mpp import CompensatorSpec

__all__ = [
    "LossFunction",
    "LossReport",
    "FlatCompensator",
    "ReflectedSolution",
    "PicardHorizon",
    "SkorokhodReport",
    "make_loss",
    "validate_loss",
    "operator_L",
    "running_sup_reflect",
    "picard_horizon",
    "solve_reflected",
    "skorokhod_report",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LossFunction:
    name: str
    fn: Callable
    kappa_lower: float
    kappa_upper: float

    def __post_init__(self):
        if not 0 < self.kappa_lower <= self.kappa_upper:
            raise ValueError("need 0 < kappa_lower <= kappa_upper")

    @property
    def kappa(self) -> float:
        return self.kappa_upper / self.kappa_lower

    def __call__(self, t, y):
        return np.asarray(self.fn(t, np.asarray(y, dtype=float)), dtype=float)


def make_loss(name: str, mean_terminal: float | None = None) -> LossFunction:
    """Catalog: ``linear:c`` (``y - c``), ``sine:c,a`` (``y - c + a sin y``,
    ``|a| < 1``), ``scaled:c,k`` (``k (y - c)``).  ``c`` may be the token
    ``mean_xi``, resolved to ``mean_terminal``."""
    kind, _, arg = name.partition(":")
    parts = arg.split(",") if arg else []

    def value(tok: str) -> float:
        if tok.strip() == "mean_xi":
            if mean_terminal is None:
                raise ValueError("loss uses mean_xi but the terminal mean is unknown")
            return float(mean_terminal)
        return float(tok)

    if kind == "linear" and len(parts) == 1:
        c = value(parts[0])
        return LossFunction(name, lambda t, y: y - c, 1.0, 1.0)
    if kind == "sine" and len(parts) == 2:
        c, a = value(parts[0]), float(parts[1])
        if not abs(a) < 1:
            raise ValueError("sine loss needs |a| < 1")
        return LossFunction(name, lambda t, y: y - c + a * np.sin(y), 1.0 - abs(a), 1.0 + abs(a))
    if kind == "scaled" and len(parts) == 2:
        c, k = value(parts[0]), float(parts[1])
        if not k > 0:
            raise ValueError("scaled loss needs k > 0")
        return LossFunction(name, lambda t, y: k * (y - c), k, k)
    raise ValueError(f"unknown loss {name!r}")


@dataclass
class LossReport:
    verdicts: dict
    margins: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def validate_loss(loss: LossFunction, n_samples: int = 2000, y_range=(-10.0, 10.0), t_range=(0.0, 1.0), seed: int = 0, tol: float = 1e-9) -> LossReport:
    if n_samples < 1:
        raise ValueError("sample plan is empty")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, n_samples)
    y1, y2 = rng.uniform(*y_range, (2, n_samples))
    l1 = np.array([loss(ti, np.array([a]))[0] for ti, a in zip(t, y1)])
    l2 = np.array([loss(ti, np.array([b]))[0] for ti, b in zip(t, y2)])
    dy = y1 - y2
    dl = l1 - l2
    gap = np.abs(dy) > 1e-12
    inc = np.where(gap, -dl * np.sign(dy), -np.inf)
    lower = np.where(gap, loss.kappa_lower * np.abs(dy) - np.abs(dl), -np.inf)
    upper = np.where(gap, np.abs(dl) - loss.kappa_upper * np.abs(dy), -np.inf)
    # linear growth with C = max(kappa_upper, |l(t, 0)|)
    l0 = np.array([loss(ti, np.zeros(1))[0] for ti in t])
    C = max(loss.kappa_upper, float(np.max(np.abs(l0))))
    growth = np.abs(l1) - C * (1 + np.abs(y1))
    margins = {
        "strictly_increasing": float(inc.max()),
        "lower_lipschitz": float(lower.max()),
        "upper_lipschitz": float(upper.max()),
        "linear_growth": float(growth.max()),
    }
    verdicts = {k: v <= tol if k != "strictly_increasing" else v < 0 for k, v in margins.items()}
    return LossReport(verdicts, margins, tol)


def operator_L(loss: LossFunction, t: float, values, probs, tol: float = 1e-12) -> float:
    """Smallest ``x >= 0`` with ``E[l(t, x + eta)] >= 0`` for a discrete law.

    Bisection on ``[0, -E[l(t, eta)] / kappa_lower]``; the returned point is
    the upper end of the final bracket, so the constraint always holds there.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or np.any(probs < -1e-15) or abs(probs.sum() - 1.0) > 1e-8:
        raise ValueError("law must be nonnegative weights summing to one")

    def mean_loss(x):
        return math.fsum(probs * loss(t, x + values))

    m0 = mean_loss(0.0)
    if m0 >= 0:
        return 0.0
    lo, hi = 0.0, -m0 / loss.kappa_lower
    grow = 0
    while mean_loss(hi) < 0:  # rounding, or a loss whose declared kappa_lower is too large
        hi = 2.0 * hi + 1e-15
        grow += 1
        if grow > 200:
            raise ValueError("cannot bracket L_t; the loss is not bi-Lipschitz as declared")
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mean_loss(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class FlatCompensator:
    times: np.ndarray
    values: np.ndarray

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass(eq=False)
class ReflectedSolution:
    y_field: ValueField
    L: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    K: FlatCompensator
    laws: LawTable
    trace: list = field(default_factory=list)
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def U(self) -> np.ndarray:
        return self.y_field.u


def running_sup_reflect(y_field: ValueField, laws: LawTable, loss: LossFunction, tol: float = 1e-12) -> ReflectedSolution:
    grid = y_field.grid
    if not np.array_equal(laws.grid.times, grid.times):
        raise ValueError("law table and value field use different grids")
    L = np.array([operator_L(loss, t, y_field.y[i], laws.probs[i], tol) for i, t in enumerate(grid.times)])
    R = np.maximum.accumulate(L[::-1])[::-1]
    Y = y_field.y + R[:, None]
    K = FlatCompensator(grid.times, R[0] - R)
    return ReflectedSolution(y_field, L, R, Y, K, laws, diagnostics={"bisection_tol": tol})


@dataclass(frozen=True)
class PicardHorizon:
    h: float
    windows: int
    guaranteed: bool
    global_factor: float


def picard_horizon(beta: float, kappa: float, spec: CompensatorSpec, grid: TimeGrid | None = None) -> PicardHorizon:
    """Largest window ``h`` with ``(32 + 64 kappa) beta rho(h) < 1``.

    With a grid, ``h`` is the longest span of consecutive steps whose every
    placement satisfies the condition; ``guaranteed`` is False when no single
    step does.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    T = spec.T
    c = (32.0 + 64.0 * kappa) * beta
    global_factor = c * float(spec.A_values[-1])
    if c == 0:
        return PicardHorizon(T, 1, True, 0.0)
    if grid is None:
        h = min(T, np.nextafter(spec.rho.inverse(1.0 / c), 0.0))
    else:
        times = grid.times

        def ok(k):
            return bool(np.all(c * spec.rho(times[k:] - times[:-k]) < 1.0))

        lo, hi = 0, grid.N
        while lo < hi:  # largest k with ok(k); ok is monotone since rho increases
            mid = (lo + hi + 1) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid - 1
        h = float((times[lo:] - times[:-lo]).max()) if lo > 0 else 0.0
    if h <= 0:
        return PicardHorizon(0.0, 0, False, global_factor)
    windows = math.ceil(T / h - 1e-12)
    if windows > 10**6:
        log.warning("Picard horizon needs %d windows", windows)
    return PicardHorizon(float(h), windows, True, global_factor)


def solve_reflected(
    spec: CompensatorSpec,
    driver: Driver,
    loss: LossFunction,
    xi: TerminalCondition,
    grid: TimeGrid,
    *,
    picard_tol: float = 1e-10,
    max_iter: int = 50,
    bisection_tol: float = 1e-12,
    model: LatticeModel | None = None,
    **solver_opts,
) -> ReflectedSolution:
    """Picard iteration ``Y^(m)`` with the driver's y-argument frozen at
    ``Y^(m-1)`` (``Y^(0) = 0``), each step reflected by the running sup."""
    model = model or LatticeModel(
        spec, grid, solver_opts.pop("n_max", None), solver_opts.pop("j_max", 8), solver_opts.pop("tail_tol", 1e-12)
    )
    laws = forward_law(spec, grid, model=model)
    prev = np.zeros((grid.N + 1, model.states.size))
    trace: list[float] = []
    sol = None
    converged = False
    for m in range(1, max_iter + 1):
        field_m = solve_backward(spec, driver, xi, grid, model=model, frozen_y=prev, **solver_opts)
        sol = running_sup_reflect(field_m, laws, loss, bisection_tol)
        dist = float(np.max(np.abs(sol.Y - prev)))
        trace.append(dist)
        prev = sol.Y
        if not driver.depends_on_y or dist < picard_tol:
            converged = True
            break
    if not converged:
        log.warning("Picard iteration stopped at max_iter=%d with distance %.3e", max_iter, trace[-1])
    horizon = picard_horizon(driver.growth.beta, loss.kappa, spec, grid)
    sol.trace = trace
    sol.converged = converged
    sol.diagnostics.update(
        {
            "iterations": len(trace),
            "picard_tol": picard_tol,
            "horizon_h": horizon.h,
            "horizon_windows": horizon.windows,
            "guaranteed": horizon.guaranteed,
            "global_factor": horizon.global_factor,
        }
    )
    return sol


@dataclass
class SkorokhodReport:
    margins: np.ndarray
    min_margin: float
    flatness: float
    K_T: float
    passed: bool
    tol: float
    binding_violations: int

    def to_dict(self) -> dict:
        return {
            "min_margin": self.min_margin,
            "flatness": self.flatness,
            "K_T": self.K_T,
            "passed": self.passed,
            "tol": self.tol,
            "binding_violations": self.binding_violations,
        }


def skorokhod_report(sol: ReflectedSolution, loss: LossFunction, laws: LawTable, tol: float = 1e-8, K: FlatCompensator | None = None) -> SkorokhodReport:
    """Constraint margins ``E[l(t_i, Y_{t_i})]`` and the flatness sum
    ``sum_i margin_i (K_{i+1} - K_i)``.  ``K`` overrides ``sol.K`` (used to
    test perturbed compensators)."""
    K = K or sol.K
    times = laws.grid.times
    margins = np.array([math.fsum(laws.probs[i] * loss(t, sol.Y[i])) for i, t in enumerate(times)])
    dK = K.increments()
    flatness = math.fsum(margins[:-1] * dK)
    K_T = float(K.values[-1])
    binding = int(np.sum((dK > 0) & (margins[:-1] > tol)))
    passed = (
        margins.min() >= -tol
        and abs(flatness) <= tol * K_T
        and np.all(dK >= -1e-15)
        and K.values[0] == 0.0
    )
    return SkorokhodReport(margins, float(margins.min()), float(flatness), K_T, bool(passed), tol, binding)
