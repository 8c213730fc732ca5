"""Backward dynamic programming on the jump-count lattice.

Under a deterministic compensator the pair ``(t, N_t)`` is Markov, so the
BSDE solution is ``Y_t = y(t, N_t)`` and ``U_t(e) = y(t, N_{t-} + e) -
y(t, N_{t-})``.  The lattice keeps count vectors with total at most
``n_max``; jumps that would leave it are absorbed at the boundary (the
"capped" chain).  Kernels, forward laws and conditional expectations all use
the same capped chain, so they are mutually exact.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse, stats
from scipy.special import gammaln, logsumexp

from .drivers import Driver, TerminalCondition
from .mpp import CompensatorSpec, MppPath, PredictableField, integral_nu, integral_p, simulate_path

__all__ = [
    "StateSpace",
    "TimeGrid",
    "TransitionKernel",
    "LatticeModel",
    "ValueField",
    "LawTable",
    "Trajectory",
    "ResidualStats",
    "LatticeError",
    "ContractionError",
    "transition_kernel",
    "choose_n_max",
    "solve_backward",
    "forward_law",
    "closed_form_zero_driver",
    "entropic_closed_form",
    "sample_trajectory",
    "forward_residual",
    "field_u_predictable",
]

log = logging.getLogger(__name__)

J_CEILING = 400


class LatticeError(RuntimeError):
    """Numerical hard error: truncation, overflow or non-convergence."""


class ContractionError(ValueError):
    """Implicit step requested with ``beta * dA >= 1``."""


# ----------------------------------------------------------------- states


class StateSpace:
    """Count vectors ``n`` in N^K with ``sum(n) <= n_max``, ordered by total."""

    def __init__(self, K: int, n_max: int):
        if K < 1 or n_max < 0:
            raise ValueError("need K >= 1 and n_max >= 0")
        self.K, self.n_max = K, n_max
        self.counts = np.array(list(_compositions_upto(K, n_max)), dtype=np.int64)
        self.size = self.counts.shape[0]
        self.totals = self.counts.sum(axis=1)
        self.room = n_max - self.totals
        cells = (n_max + 1) ** K
        if cells > 5_000_000:
            raise ValueError(f"state lookup table too large ({cells} cells); lower n_max or K")
        self._radix = (n_max + 1) ** np.arange(K)
        self._table = np.full(cells, -1, dtype=np.int64)
        self._table[self.counts @ self._radix] = np.arange(self.size)
        up = np.full((self.size, K), -1, dtype=np.int64)
        for e in range(K):
            nxt = self.counts.copy()
            nxt[:, e] += 1
            ok = self.totals < n_max
            up[ok, e] = self.index(nxt[ok])
        self.up = up

    def index(self, counts) -> np.ndarray:
        """State indices for rows of ``counts``; -1 outside the lattice."""
        counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
        inside = (counts >= 0).all(axis=1) & (counts.sum(axis=1) <= self.n_max)
        out = np.full(counts.shape[0], -1, dtype=np.int64)
        out[inside] = self._table[counts[inside] @ self._radix]
        return out


def _compositions_upto(K: int, n_max: int):
    for total in range(n_max + 1):
        yield from _compositions(K, total)


def _compositions(K: int, total: int):
    if K == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(K - 1, total - first):
            yield (first,) + rest


# ------------------------------------------------------------------ grid


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray
    dA: np.ndarray

    @classmethod
    def uniform(cls, spec: CompensatorSpec, N: int) -> "TimeGrid":
        """``N`` equal steps, refined by every breakpoint of ``A`` and ``phi``."""
        if N < 1:
            raise ValueError("grid needs at least one step")
        times = np.unique(np.concatenate([np.linspace(0.0, spec.T, N + 1), spec.breakpoints()]))
        return cls.from_times(spec, times)

    @classmethod
    def from_times(cls, spec: CompensatorSpec, times) -> "TimeGrid":
        times = np.asarray(times, dtype=float)
        if times[0] != 0.0 or abs(times[-1] - spec.T) > 1e-12 or np.any(np.diff(times) <= 0):
            raise ValueError("grid must increase strictly from 0 to T")
        missing = [b for b in spec.breakpoints() if np.min(np.abs(times - b)) > 1e-12]
        if missing:
            raise ValueError(f"grid misses breakpoints {missing[:5]}")
        return cls(times, np.diff(spec.A(times)))

    @property
    def N(self) -> int:
        return self.times.size - 1

    def layer_of(self, t) -> np.ndarray:
        """Step index ``i`` with ``t`` in ``(t_i, t_{i+1}]`` (0 at ``t = 0``)."""
        return np.clip(np.searchsorted(self.times, t, side="left") - 1, 0, self.N - 1)


# ---------------------------------------------------------------- kernel


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """One-step law of the count increment: Poisson total, multinomial marks."""

    increments: np.ndarray
    probs: np.ndarray
    j_max: int
    tail_mass: float
    dA: float
    phi: np.ndarray


def _poisson_cap(dA: float, tail_tol: float, j_max: int) -> int:
    if dA <= 0:
        return j_max
    j = j_max
    while stats.poisson.sf(j, dA) >= tail_tol:
        j += 1
        if j > J_CEILING:
            need = int(stats.poisson.isf(tail_tol, dA)) + 1
            raise LatticeError(f"Poisson tail {tail_tol:g} at dA={dA:g} needs j_max={need} > ceiling {J_CEILING}")
    return j


def _multinomial(K: int, total: int, phi: np.ndarray):
    comps = np.array(list(_compositions(K, total)), dtype=np.int64)
    with np.errstate(divide="ignore"):
        logphi = np.log(phi)
    logp = gammaln(total + 1) - gammaln(comps + 1).sum(axis=1)
    logp = logp + np.where(comps > 0, comps * logphi, 0.0).sum(axis=1)
    return comps, np.exp(logp)


def transition_kernel(spec: CompensatorSpec, t0: float, t1: float, j_max: int = 8, tail_tol: float = 1e-12) -> TransitionKernel:
    """Increment law over ``(t0, t1]``, truncated where the Poisson tail
    drops below ``tail_tol`` (``j_max`` is raised as needed)."""
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    dA = float(spec.A(t1) - spec.A(t0))
    phi = spec.phi_average(t0, t1)
    if dA == 0.0:
        return TransitionKernel(np.zeros((1, spec.K), np.int64), np.ones(1), j_max, 0.0, 0.0, phi)
    jm = _poisson_cap(dA, tail_tol, j_max)
    incs, probs = [], []
    pois = stats.poisson.pmf(np.arange(jm + 1), dA)
    for j in range(jm + 1):
        comps, p = _multinomial(spec.K, j, phi)
        keep = p > 0
        incs.append(comps[keep])
        probs.append(pois[j] * p[keep])
    return TransitionKernel(np.vstack(incs), np.concatenate(probs), jm, float(stats.poisson.sf(jm, dA)), dA, phi)


def _step_matrix(states: StateSpace, dA: float, phi: np.ndarray, jm: int) -> sparse.csr_matrix:
    """Capped-chain transition matrix: from room ``r`` at most ``r`` jumps
    land, the excess Poisson mass is lumped onto exactly ``min(r, jm)`` jumps."""
    S, K = states.size, states.K
    if dA == 0.0:
        return sparse.identity(S, format="csr")
    pois = stats.poisson.pmf(np.arange(jm + 1), dA)
    comps = [_multinomial(K, j, phi) for j in range(jm + 1)]
    rows, cols, vals = [], [], []
    for r in np.unique(states.room):
        src = np.flatnonzero(states.room == r)
        cap = int(min(r, jm))
        for j in range(cap + 1):
            mass = pois[j] if j < cap else float(stats.poisson.sf(j - 1, dA))
            inc, p = comps[j]
            keep = p > 0
            inc, p = inc[keep], p[keep]
            dest = states.index((states.counts[src][:, None, :] + inc[None, :, :]).reshape(-1, K))
            rows.append(np.repeat(src, inc.shape[0]))
            cols.append(dest)
            vals.append(np.tile(mass * p, src.size))
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
    )
    mat.sum_duplicates()
    return mat


class LatticeModel:
    """Compensator + grid + state space, with cached step matrices."""

    def __init__(self, spec: CompensatorSpec, grid: TimeGrid, n_max: int | None = None, j_max: int = 8, tail_tol: float = 1e-12):
        self.spec, self.grid = spec, grid
        self.n_max = choose_n_max(spec) if n_max is None else int(n_max)
        self.states = StateSpace(spec.K, self.n_max)
        self.j_max, self.tail_tol = j_max, tail_tol
        self.phis = np.array([spec.phi_average(a, b) for a, b in zip(grid.times[:-1], grid.times[1:])])
        cache = {}
        self.matrices = []
        self.kernel_tail = 0.0
        for dA, phi in zip(grid.dA, self.phis):
            key = (float(dA), tuple(phi))
            if key not in cache:
                jm = _poisson_cap(dA, tail_tol, j_max) if dA > 0 else j_max
                cache[key] = _step_matrix(self.states, float(dA), phi, jm)
                if dA > 0:
                    self.kernel_tail = max(self.kernel_tail, float(stats.poisson.sf(jm, dA)))
            self.matrices.append(cache[key])

    def expect_backward(self, terminal: np.ndarray) -> np.ndarray:
        """``E[terminal(N_T) | N_{t_i} = n]`` for every layer; shape ``(N+1, S)``."""
        out = np.empty((self.grid.N + 1, self.states.size))
        out[-1] = terminal
        for i in range(self.grid.N - 1, -1, -1):
            out[i] = self.matrices[i] @ out[i + 1]
        return out

    def log_expect_backward(self, log_terminal: np.ndarray) -> np.ndarray:
        """Log-domain version of :meth:`expect_backward`."""
        out = np.empty((self.grid.N + 1, self.states.size))
        out[-1] = log_terminal
        for i in range(self.grid.N - 1, -1, -1):
            m = out[i + 1].max()
            out[i] = np.log(self.matrices[i] @ np.exp(out[i + 1] - m)) + m
        return out


def choose_n_max(spec: CompensatorSpec, tail: float = 1e-10) -> int:
    """Smallest ``n_max`` with ``P(N_T >= n_max) < tail``."""
    total = float(spec.A_values[-1])
    if total == 0:
        return 1
    return int(stats.poisson.isf(tail, total)) + 2


# --------------------------------------------------------------- results


@dataclass(eq=False)
class ValueField:
    model: LatticeModel
    y: np.ndarray
    u: np.ndarray
    f_values: np.ndarray
    scheme: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.model.grid

    @property
    def states(self) -> StateSpace:
        return self.model.states

    def y0(self) -> float:
        return float(self.y[0, 0])

    def csv_rows(self):
        """``(t, n_1..n_K, y, u_1..u_K)`` rows; ``u`` is NaN on the last layer."""
        K = self.states.K
        for i, t in enumerate(self.grid.times):
            for s in range(self.states.size):
                us = self.u[i, s] if i < self.grid.N else np.full(K, np.nan)
                yield (float(t), *map(int, self.states.counts[s]), float(self.y[i, s]), *map(float, us))


@dataclass(eq=False)
class LawTable:
    grid: TimeGrid
    states: StateSpace
    probs: np.ndarray
    boundary_mass: float

    def layer(self, i: int):
        return self.probs[i]


def _jumps(y_next: np.ndarray, states: StateSpace) -> np.ndarray:
    u = np.zeros((states.size, states.K))
    for e in range(states.K):
        ok = states.up[:, e] >= 0
        u[ok, e] = y_next[states.up[ok, e]] - y_next[ok]
    return u


def _check_truncation(model: LatticeModel, limit: float) -> float:
    law = forward_law(model.spec, model.grid, model=model)
    if law.boundary_mass > limit:
        raise LatticeError(
            f"lattice truncation: P(N_T reaches n_max={model.n_max}) = {law.boundary_mass:.3e} > {limit:g}; raise n_max"
        )
    return law.boundary_mass


def solve_backward(
    spec: CompensatorSpec,
    driver: Driver,
    xi: TerminalCondition,
    grid: TimeGrid,
    *,
    scheme: str = "explicit",
    implicit: bool = False,
    picard_tol: float = 1e-12,
    j_max: int = 8,
    tail_tol: float = 1e-12,
    n_max: int | None = None,
    state_tail_tol: float = 1e-10,
    frozen_y: np.ndarray | None = None,
    rk_substeps: int = 1,
    model: LatticeModel | None = None,
    max_fixed_point_iter: int = 500,
) -> ValueField:
    """Solve ``Y_t = xi + int_t^T f(s, Y_s, U_s) dA_s - int_t^T int_E U dq``.

    ``scheme="explicit"`` is the one-step scheme ``y_i = E_i[y_{i+1}] +
    f(t_i, yhat, u_i) dA_i`` with ``u_i`` from layer ``i+1`` differences and
    ``yhat = E_i[y_{i+1}]`` (or the implicit fixed point when ``implicit``).
    ``scheme="rk4"`` integrates the lattice ODE ``dy/dA = -f(y, U) -
    sum_e phi_e U_e`` with classical Runge-Kutta on every step.
    ``frozen_y`` (shape ``(N+1, S)``) replaces the y-argument of the driver.
    """
    if scheme not in ("explicit", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    model = model or LatticeModel(spec, grid, n_max, j_max, tail_tol)
    if model.grid is not grid and not np.array_equal(model.grid.times, grid.times):
        raise ValueError("model grid differs from grid")
    states = model.states
    beta = driver.growth.beta
    if implicit and scheme == "explicit" and beta * grid.dA.max(initial=0.0) >= 1.0:
        raise ContractionError(
            f"implicit step needs beta*max dA < 1, got {beta:g}*{grid.dA.max():g} = {beta * grid.dA.max():g}"
        )
    boundary = _check_truncation(model, state_tail_tol)
    N, S, K = grid.N, states.size, states.K
    y = np.empty((N + 1, S))
    u = np.empty((N, S, K))
    fv = np.empty((N, S))
    y[N] = xi(states.counts)
    if not np.all(np.isfinite(y[N])):
        raise LatticeError("terminal condition is not finite on the lattice")
    fp_iters = 0
    for i in range(N - 1, -1, -1):
        t = grid.times[i]
        phi = model.phis[i]
        dA = grid.dA[i]
        u[i] = _jumps(y[i + 1], states)
        cont = model.matrices[i] @ y[i + 1]
        if scheme == "rk4":
            y[i] = _rk4_step(driver, y[i + 1], grid.times[i + 1], t, dA, phi, states, frozen_y, i, rk_substeps)
            yarg = frozen_y[i] if frozen_y is not None else y[i + 1]
            fv[i] = driver(t, yarg, u[i], phi)
        else:
            if frozen_y is not None:
                yhat = frozen_y[i]
                fv[i] = driver(t, yhat, u[i], phi)
                y[i] = cont + fv[i] * dA
            elif implicit and driver.depends_on_y and dA > 0:
                cur = cont.copy()
                for k in range(max_fixed_point_iter):
                    nxt = cont + driver(t, cur, u[i], phi) * dA
                    if np.max(np.abs(nxt - cur)) <= picard_tol * (1.0 + np.max(np.abs(nxt))):
                        cur = nxt
                        break
                    cur = nxt
                else:
                    raise LatticeError(f"implicit fixed point did not converge at layer {i}")
                fp_iters = max(fp_iters, k + 1)
                fv[i] = driver(t, cur, u[i], phi)
                y[i] = cur
            else:
                fv[i] = driver(t, cont, u[i], phi)
                y[i] = cont + fv[i] * dA
        if not np.all(np.isfinite(y[i])):
            raise LatticeError(f"non-finite values at layer {i} (t={t:g})")
    diagnostics = {
        "boundary_mass": boundary,
        "kernel_tail": model.kernel_tail,
        "n_max": model.n_max,
        "implicit": implicit,
        "fixed_point_iterations": fp_iters,
    }
    if driver.lipschitz_u is not None:
        diagnostics["monotone_step"] = bool(grid.dA.max(initial=0.0) * (beta + 2 * driver.lipschitz_u) <= 1.0)
    return ValueField(model, y, u, fv, scheme, diagnostics)


def _rk4_step(driver, y_next, t_hi, t_lo, dA, phi, states, frozen_y, i, substeps):
    """Integrate ``dy/dA = -(f + phi . U)`` backward from ``t_hi`` to ``t_lo``."""
    if dA == 0:
        return y_next.copy()
    h = dA / substeps
    dt = (t_hi - t_lo) / substeps

    def rhs(tt, yy):
        uu = _jumps(yy, states)
        if frozen_y is not None:
            w = (tt - t_lo) / (t_hi - t_lo)
            yarg = (1 - w) * frozen_y[i] + w * frozen_y[i + 1]
        else:
            yarg = yy
        return driver(tt, yarg, uu, phi) + uu @ phi

    yy = y_next.copy()
    tt = t_hi
    for _ in range(substeps):
        k1 = rhs(tt, yy)
        k2 = rhs(tt - dt / 2, yy + h / 2 * k1)
        k3 = rhs(tt - dt / 2, yy + h / 2 * k2)
        k4 = rhs(tt - dt, yy + h * k3)
        yy = yy + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tt -= dt
    return yy


def forward_law(spec: CompensatorSpec, grid: TimeGrid, n_max: int | None = None, *, j_max: int = 8, tail_tol: float = 1e-12, model: LatticeModel | None = None) -> LawTable:
    """Exact layer-by-layer law of ``N_{t_i}`` under the capped chain."""
    model = model or LatticeModel(spec, grid, n_max, j_max, tail_tol)
    S = model.states.size
    probs = np.zeros((grid.N + 1, S))
    probs[0, 0] = 1.0
    for i in range(grid.N):
        probs[i + 1] = model.matrices[i].T @ probs[i]
    boundary = float(probs[-1][model.states.room == 0].sum())
    return LawTable(grid, model.states, probs, boundary)


# --------------------------------------------------------------- oracles


def _poisson_expect(spec: CompensatorSpec, xi: TerminalCondition, t: float, n, *, log_weights_fn=None, tail: float = 1e-13):
    """Sum over the independent per-mark Poisson increments on ``(t, T]``."""
    n = np.asarray(n, dtype=np.int64).reshape(-1)
    K = spec.K
    pts = np.unique(np.concatenate([[t, spec.T], spec.breakpoints()]))
    pts = pts[(pts >= t) & (pts <= spec.T)]
    dA = np.diff(spec.A(pts))
    means = (dA[:, None] * spec.phi(0.5 * (pts[:-1] + pts[1:]))).sum(axis=0) if pts.size > 1 else np.zeros(K)
    axes = []
    for m in means:
        hi = 0 if m == 0 else int(stats.poisson.isf(tail / K, m)) + 1
        ks = np.arange(hi + 1)
        axes.append((ks, stats.poisson.logpmf(ks, m) if m > 0 else np.where(ks == 0, 0.0, -np.inf)))
    grid = np.array(list(itertools.product(*[a[0] for a in axes])), dtype=np.int64)
    logw = sum(np.meshgrid(*[a[1] for a in axes], indexing="ij")[k].ravel() for k in range(K))
    values = xi(grid + n[None, :])
    return logw, values


def closed_form_zero_driver(spec: CompensatorSpec, xi: TerminalCondition, t: float, n) -> float:
    """``E[g(N_T) | N_t = n]`` for ``f = 0`` by direct Poisson summation."""
    logw, values = _poisson_expect(spec, xi, t, n)
    w = np.exp(logw)
    return float(math.fsum(w * values) / math.fsum(w))


def entropic_closed_form(spec: CompensatorSpec, xi: TerminalCondition, lam: float, t: float, n) -> float:
    """``(1/lam) log E[exp(lam g(N_T)) | N_t = n]``, the solution for
    ``f = (1/lam) j_lam(u)``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    logw, values = _poisson_expect(spec, xi, t, n)
    return float((logsumexp(logw + lam * values) - logsumexp(logw)) / lam)


# ---------------------------------------------------------- path-level


@dataclass(eq=False)
class Trajectory:
    """Piecewise record of ``(t, Y_t, U_t)`` along one path.

    ``kind`` is ``"grid"`` at grid times, ``"pre"``/``"post"`` around events.
    Between ``t_i`` and ``t_{i+1}`` the path reads layer ``i+1`` values.
    """

    times: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    kind: np.ndarray

    def jumps(self) -> np.ndarray:
        post = self.kind == "post"
        return self.Y[post] - self.Y[np.flatnonzero(post) - 1]


def _path_states(field: ValueField, path: MppPath, t) -> np.ndarray:
    idx = field.states.index(path.counts_before(t))
    if np.any(idx < 0):
        raise LatticeError("path leaves the lattice (event count beyond n_max)")
    return idx


def sample_trajectory(field: ValueField, path: MppPath) -> Trajectory:
    grid = field.grid
    if abs(path.horizon - grid.times[-1]) > 1e-12:
        raise ValueError("path horizon differs from grid horizon")
    counts_grid = field.states.index(path.counts_at(grid.times))
    if np.any(counts_grid < 0):
        raise LatticeError("path leaves the lattice (event count beyond n_max)")
    recs = []
    for i, t in enumerate(grid.times):
        s = counts_grid[i]
        us = field.u[min(i, grid.N - 1), s]
        recs.append((t, field.y[i, s], us, "grid"))
    pre = _path_states(field, path, path.times)
    layers = grid.layer_of(path.times)
    cum = path.cumulative_counts()
    for k, (t, e) in enumerate(zip(path.times, path.marks)):
        i, s = layers[k], pre[k]
        s_post = field.states.index(cum[k + 1])[0]
        y_pre = field.y[i + 1, s]
        recs.append((t, y_pre, field.u[i, s], "pre"))
        recs.append((t, y_pre + field.u[i, s, e], field.u[i, s_post] if s_post >= 0 else field.u[i, s], "post"))
    order = sorted(range(len(recs)), key=lambda k: (recs[k][0], {"pre": 0, "post": 1, "grid": 2}[recs[k][3]]))
    recs = [recs[k] for k in order]
    return Trajectory(
        np.array([r[0] for r in recs]),
        np.array([r[1] for r in recs]),
        np.array([r[2] for r in recs]),
        np.array([r[3] for r in recs]),
    )


def field_u_predictable(field: ValueField) -> PredictableField:
    """``U`` of a solved field as a predictable integrand (constant per step)."""
    grid, states = field.grid, field.states

    def fn(t, counts, mark):
        i = grid.layer_of(t)
        s = states.index(counts)
        return field.u[i, s, mark]

    return PredictableField(fn, vectorized=True, breakpoints=grid.times)


def _layer_table_field(field: ValueField, table: np.ndarray) -> PredictableField:
    grid, states = field.grid, field.states

    def fn(t, counts, mark):
        return table[grid.layer_of(t), states.index(counts)]

    return PredictableField(fn, vectorized=True, breakpoints=grid.times)


@dataclass
class ResidualStats:
    mean: float
    mean_abs: float
    max_abs: float
    stddev: float
    M: int
    grid_N: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def forward_residual(field: ValueField, spec: CompensatorSpec, driver: Driver, seeds, quad_step: float = 0.01) -> ResidualStats:
    """Pathwise defect ``Y_0 - xi - int f dA + int int U dq`` over simulated paths.

    Along a path ``Y_s = y(i+1, N_s)`` on ``(t_i, t_{i+1}]`` and ``U`` is the
    field's jump table, so ``f`` is tabulated once per (layer, state).
    """
    seeds = list(seeds)
    if len(seeds) < 1:
        raise ValueError("forward residual needs at least one path")
    grid, states = field.grid, field.states
    ftab = np.empty((grid.N, states.size))
    for i in range(grid.N):
        ftab[i] = driver(grid.times[i], field.y[i + 1], field.u[i], field.model.phis[i])
    # f is mark-free, so integrating it against nu gives int f dA (sum_e phi_e = 1)
    F = _layer_table_field(field, ftab)
    Uf = field_u_predictable(field)
    D = np.empty(len(seeds))
    for k, seed in enumerate(seeds):
        path = simulate_path(spec, seed)
        terminal = field.y[-1, field.states.index(path.counts_at(spec.T))[0]]
        drift = integral_nu(spec, F, path, quad_step)
        mart = integral_p(path, Uf) - integral_nu(spec, Uf, path, quad_step)
        D[k] = field.y[0, 0] - terminal - drift + mart
    return ResidualStats(float(D.mean()), float(np.abs(D).mean()), float(np.abs(D).max()), float(D.std(ddof=1)) if D.size > 1 else 0.0, len(seeds), grid.N)
