"""Marked point processes with a deterministic compensator.

The compensator is ``nu(dt, de) = phi_t(de) dA_t`` with a finite mark space,
a piecewise-constant mark law ``phi`` and a continuous piecewise-linear clock
``A``.  Paths are simulated by pushing a unit-rate Poisson sequence through
the generalized inverse of ``A``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MarkSpace",
    "Modulus",
    "CompensatorSpec",
    "MppPath",
    "PredictableField",
    "simulate_path",
    "simulate_paths",
    "integral_p",
    "integral_nu",
    "integral_q",
    "paths_to_rows",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


class SpecError(ValueError):
    """Invalid compensator or path data."""


@dataclass(frozen=True)
class MarkSpace:
    marks: tuple
    labels: tuple | None = None

    def __post_init__(self):
        if len(self.marks) < 1:
            raise SpecError("mark space needs at least one mark")
        if len(set(self.marks)) != len(self.marks):
            raise SpecError("mark identifiers must be unique")
        if self.labels is not None and len(self.labels) != len(self.marks):
            raise SpecError("labels must match marks one-to-one")

    @property
    def size(self) -> int:
        return len(self.marks)


@dataclass(frozen=True)
class Modulus:
    """Modulus of continuity ``rho(h) = slope * h``."""

    slope: float

    def __call__(self, h):
        return self.slope * np.abs(np.asarray(h, dtype=float))

    def inverse(self, level: float) -> float:
        """Supremum of ``h`` with ``rho(h) < level`` (``inf`` if rho is flat)."""
        if self.slope <= 0.0:
            return np.inf
        return level / self.slope


@dataclass(frozen=True, eq=False)
class CompensatorSpec:
    mark_space: MarkSpace
    phi_times: np.ndarray
    phi_values: np.ndarray
    A_times: np.ndarray
    A_values: np.ndarray
    horizon: float
    rho: Modulus | None = None

    def __post_init__(self):
        phi_t = np.asarray(self.phi_times, dtype=float)
        phi_v = np.atleast_2d(np.asarray(self.phi_values, dtype=float))
        a_t = np.asarray(self.A_times, dtype=float)
        a_v = np.asarray(self.A_values, dtype=float)
        object.__setattr__(self, "phi_times", phi_t)
        object.__setattr__(self, "phi_values", phi_v)
        object.__setattr__(self, "A_times", a_t)
        object.__setattr__(self, "A_values", a_v)
        T = float(self.horizon)
        if not T > 0:
            raise SpecError("horizon must be positive")
        K = self.mark_space.size
        if phi_v.shape != (phi_t.size, K):
            raise SpecError(f"phi values must have shape ({phi_t.size}, {K})")
        if phi_t[0] != 0.0 or np.any(np.diff(phi_t) <= 0) or phi_t[-1] >= T:
            raise SpecError("phi times must start at 0, increase strictly and stay below T")
        if np.any(phi_v < 0) or np.any(np.abs(phi_v.sum(axis=1) - 1.0) > 1e-12):
            bad = int(np.argmax(np.abs(phi_v.sum(axis=1) - 1.0) + (phi_v < 0).any(axis=1)))
            raise SpecError(f"phi row {bad} is not a probability vector")
        if a_t.size < 2 or a_t[0] != 0.0 or abs(a_t[-1] - T) > 1e-12 * max(1.0, T):
            raise SpecError("A breakpoints must run from 0 to T")
        if np.any(np.diff(a_t) <= 0):
            raise SpecError("A breakpoint times must increase strictly")
        if a_v.shape != a_t.shape or a_v[0] != 0.0:
            raise SpecError("A must start at A(0) = 0")
        if np.any(np.diff(a_v) < 0) or not np.all(np.isfinite(a_v)):
            raise SpecError("A must be finite and nondecreasing")
        rho = self.rho if self.rho is not None else Modulus(float(self.slopes().max(initial=0.0)))
        object.__setattr__(self, "rho", rho)
        # rho must dominate increments on every breakpoint pair
        inc = np.abs(a_v[:, None] - a_v[None, :])
        dom = rho(np.abs(a_t[:, None] - a_t[None, :]))
        if np.any(inc > dom + 1e-12 * (1.0 + inc)):
            raise SpecError("modulus rho does not dominate the increments of A")

    @property
    def K(self) -> int:
        return self.mark_space.size

    @property
    def T(self) -> float:
        return float(self.horizon)

    def slopes(self) -> np.ndarray:
        return np.diff(self.A_values) / np.diff(self.A_times)

    def A(self, t):
        return np.interp(t, self.A_times, self.A_values)

    def A_inv(self, a):
        """Generalized inverse ``inf{t : A(t) >= a}``."""
        a = np.asarray(a, dtype=float)
        j = np.searchsorted(self.A_values, a, side="left")
        j = np.clip(j, 1, self.A_times.size - 1)
        a0, a1 = self.A_values[j - 1], self.A_values[j]
        t0, t1 = self.A_times[j - 1], self.A_times[j]
        span = a1 - a0
        w = np.divide(a - a0, span, out=np.zeros_like(a), where=span > 0)
        return t0 + np.clip(w, 0.0, 1.0) * (t1 - t0)

    def phi(self, t):
        """Mark law at ``t`` (rows for array input)."""
        idx = np.searchsorted(self.phi_times, t, side="right") - 1
        return self.phi_values[np.clip(idx, 0, self.phi_times.size - 1)]

    def slope(self, t):
        """Right derivative of ``A`` at ``t``."""
        idx = np.searchsorted(self.A_times, t, side="right") - 1
        idx = np.clip(idx, 0, self.A_times.size - 2)
        return self.slopes()[idx]

    def breakpoints(self) -> np.ndarray:
        pts = np.concatenate([self.A_times, self.phi_times, [self.T]])
        return np.unique(pts[(pts >= 0) & (pts <= self.T)])

    def phi_average(self, t0: float, t1: float) -> np.ndarray:
        """dA-weighted average of phi over ``[t0, t1]``."""
        pts = np.unique(np.concatenate([[t0, t1], self.breakpoints()]))
        pts = pts[(pts >= t0) & (pts <= t1)]
        dA = np.diff(self.A(pts))
        if dA.sum() <= 0:
            return self.phi(0.5 * (t0 + t1))
        mids = 0.5 * (pts[:-1] + pts[1:])
        return (dA[:, None] * self.phi(mids)).sum(axis=0) / dA.sum()


@dataclass(frozen=True, eq=False)
class MppPath:
    times: np.ndarray
    marks: np.ndarray
    horizon: float
    n_marks: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        marks = np.asarray(self.marks, dtype=int)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        if times.shape != marks.shape:
            raise SpecError("times and marks differ in length")
        if times.size and (times[0] <= 0 or times[-1] > self.horizon):
            raise SpecError("event times must lie in (0, T]")
        if np.any(np.diff(times) <= 0):
            raise SpecError("event times must increase strictly")
        if marks.size and (marks.min() < 0 or marks.max() >= self.n_marks):
            raise SpecError("mark index out of range")

    def __len__(self):
        return self.times.size

    def cumulative_counts(self) -> np.ndarray:
        """Row ``k`` holds per-mark counts after the first ``k`` events."""
        onehot = np.zeros((self.times.size + 1, self.n_marks), dtype=np.int64)
        if self.times.size:
            onehot[np.arange(1, self.times.size + 1), self.marks] = 1
        return np.cumsum(onehot, axis=0)

    def counts_before(self, t) -> np.ndarray:
        """Per-mark counts on ``[0, t)``; shape ``(..., K)``."""
        k = np.searchsorted(self.times, t, side="left")
        return self.cumulative_counts()[k]

    def counts_at(self, t) -> np.ndarray:
        """Per-mark counts on ``[0, t]``."""
        k = np.searchsorted(self.times, t, side="right")
        return self.cumulative_counts()[k]

    def __eq__(self, other):
        return (
            isinstance(other, MppPath)
            and self.horizon == other.horizon
            and self.n_marks == other.n_marks
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
        )


class PredictableField:
    """Integrand ``H(t, counts on [0, t), mark)``.

    ``fn`` takes scalars unless ``vectorized`` is set, in which case it
    receives a time array, a ``(m, K)`` count array and a mark index.
    ``breakpoints`` lists times where ``H`` may jump in ``t``; integration
    never straddles them.
    """

    def __init__(self, fn: Callable, *, vectorized: bool = False, breakpoints=None):
        self.fn = fn
        self.vectorized = vectorized
        self.breakpoints = np.asarray([] if breakpoints is None else breakpoints, dtype=float)

    def __call__(self, t, counts, mark):
        if self.vectorized:
            return float(self.fn(np.array([t]), np.atleast_2d(counts), mark)[0])
        return float(self.fn(t, counts, mark))

    def evaluate(self, t: np.ndarray, counts: np.ndarray, mark: int) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.fn(t, counts, mark), dtype=float)
        return np.array([self.fn(ti, ci, mark) for ti, ci in zip(t, counts)], dtype=float)

    @classmethod
    def constant(cls, c: float) -> "PredictableField":
        return cls(lambda t, counts, mark: np.full(np.shape(t), float(c)), vectorized=True)


def simulate_path(spec: CompensatorSpec, seed: int) -> MppPath:
    """Time-changed unit Poisson process, marks drawn from ``phi`` at each event.

    The unit-rate points on ``[0, A(T)]`` are generated as a Poisson count
    followed by sorted uniforms, then mapped through the generalized inverse
    of ``A``.
    """
    rng = np.random.default_rng(seed)
    total = float(spec.A_values[-1])
    n = int(rng.poisson(total)) if total > 0 else 0
    gam = np.sort(rng.uniform(0.0, total, size=n))
    times = spec.A_inv(gam)
    if n and spec.K > 1:
        cdf = np.cumsum(spec.phi(times), axis=1)
        marks = (rng.random(n)[:, None] >= cdf[:, :-1]).sum(axis=1)
    else:
        marks = np.zeros(n, dtype=int)
    return MppPath(times, marks, spec.T, spec.K)


def simulate_paths(spec: CompensatorSpec, seeds: Sequence[int], jobs: int = 1) -> list[MppPath]:
    """Simulate one path per seed; output order follows ``seeds``."""
    if jobs <= 1:
        return [simulate_path(spec, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: simulate_path(spec, s), seeds))


def integral_p(path: MppPath, H: PredictableField) -> float:
    """Integral of ``H`` against the counting measure of ``path``."""
    if len(path) == 0:
        return 0.0
    before = path.cumulative_counts()[:-1]
    total = 0.0
    for e in np.unique(path.marks):
        sel = path.marks == e
        total += H.evaluate(path.times[sel], before[sel], int(e)).sum()
    return float(total)


def _quadrature_nodes(spec: CompensatorSpec, path: MppPath, H: PredictableField, quad_step: float):
    cuts = np.concatenate([spec.breakpoints(), path.times, H.breakpoints, [0.0, spec.T]])
    cuts = np.unique(cuts[(cuts >= 0.0) & (cuts <= spec.T)])
    lengths = np.diff(cuts)
    pieces = np.maximum(1, np.ceil(lengths / quad_step - 1e-9).astype(int))
    left = np.repeat(cuts[:-1], pieces)
    h = np.repeat(lengths / pieces, pieces)
    left = left + h * (np.arange(left.size) - np.repeat(np.cumsum(pieces) - pieces, pieces))
    mids = left + 0.5 * h
    nodes = (mids[:, None] + 0.5 * h[:, None] * _GL_NODES[None, :]).ravel()
    weights = (0.5 * h[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def integral_nu(spec: CompensatorSpec, H: PredictableField, path: MppPath, quad_step: float) -> float:
    """Integral of ``H`` against the compensator along the history of ``path``.

    Every breakpoint of ``A``, ``phi``, ``H`` and every event time is a cut, and
    each cell is split below ``quad_step`` and integrated with 3-point
    Gauss-Legendre, so integrands polynomial of degree <= 5 per cell are exact.
    """
    if not quad_step > 0:
        raise ValueError("quad_step must be positive")
    nodes, weights = _quadrature_nodes(spec, path, H, quad_step)
    w = weights * spec.slope(nodes)
    keep = w != 0
    nodes, w = nodes[keep], w[keep]
    if nodes.size == 0:
        return 0.0
    counts = path.counts_before(nodes)
    phi = spec.phi(nodes)
    total = 0.0
    for e in range(spec.K):
        pe = phi[:, e]
        if not np.any(pe):
            continue
        total += np.dot(w * pe, H.evaluate(nodes, counts, e))
    return float(total)


def integral_q(spec: CompensatorSpec, path: MppPath, H: PredictableField, quad_step: float) -> float:
    """Integral of ``H`` against the compensated measure ``p - nu``."""
    return integral_p(path, H) - integral_nu(spec, H, path, quad_step)


def paths_to_rows(paths: Sequence[MppPath], seeds: Sequence[int]):
    """Flatten paths to ``(seed, event_time, mark_index)`` rows."""
    for seed, path in zip(seeds, paths):
        for t, m in zip(path.times, path.marks):
            yield seed, float(t), int(m)
