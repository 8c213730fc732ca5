"""Generators ``f(t, y, u)``, their structural certification, and the
regularized/truncated families used to build solutions.

Drivers are evaluated on whole lattice layers at once: ``y`` has shape
``(S,)``, ``u`` has shape ``(S, K)`` and ``phi`` is the mark law at ``t``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

__all__ = [
    "GrowthParams",
    "Driver",
    "TerminalCondition",
    "SamplePlan",
    "StructureReport",
    "weighted_norm",
    "j_lambda",
    "make_driver",
    "verify_structure",
    "inf_convolution",
    "regularized_driver",
    "clamp_driver",
    "clamp_terminal",
    "shift_driver",
]

log = logging.getLogger(__name__)

CONVEX = "convex_in_u"
CONCAVE = "concave_in_u"
_EXP_GUARD = 700.0


def weighted_norm(u, phi) -> np.ndarray:
    """``(sum_e phi(e) u(e)^2)^(1/2)`` along the last axis."""
    u = np.asarray(u, dtype=float)
    return np.sqrt(np.sum(np.asarray(phi) * u * u, axis=-1))


def j_lambda(u, lam: float, phi) -> np.ndarray:
    """``sum_e phi(e) (exp(lam u(e)) - 1 - lam u(e))``, nonnegative.

    Small arguments go through ``expm1`` to avoid cancellation; once
    ``lam * max|u|`` passes 700 the exponential part is assembled from a
    weighted log-sum-exp (and overflows to ``inf`` only if the true value does).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = lam * u
    if np.max(np.abs(x), initial=0.0) <= _EXP_GUARD:
        return np.sum(phi * (np.expm1(x) - x), axis=-1)
    with np.errstate(divide="ignore"):
        lse = logsumexp(x, b=np.broadcast_to(phi, x.shape), axis=-1)
    linear = np.sum(phi * x, axis=-1)
    with np.errstate(over="ignore"):
        out = np.exp(lse) - 1.0 - linear
    return np.maximum(out, 0.0)


@dataclass(frozen=True)
class GrowthParams:
    """Constants of the exponential growth envelope and linear bound.

    ``alpha`` is piecewise constant: ``alpha_values[k]`` holds on
    ``[alpha_times[k], alpha_times[k+1])``.
    """

    beta: float = 0.0
    lam: float = 1.0
    c0: float = 0.0
    alpha_times: tuple = (0.0,)
    alpha_values: tuple = (0.0,)

    def __post_init__(self):
        if self.beta < 0 or not self.lam > 0 or self.c0 < 0:
            raise ValueError("need beta >= 0, lam > 0, c0 >= 0")
        if len(self.alpha_times) != len(self.alpha_values) or min(self.alpha_values) < 0:
            raise ValueError("alpha must be a nonnegative piecewise constant")

    @classmethod
    def constant_alpha(cls, alpha: float = 0.0, **kw) -> "GrowthParams":
        return cls(alpha_times=(0.0,), alpha_values=(float(alpha),), **kw)

    def alpha(self, t):
        idx = np.searchsorted(np.asarray(self.alpha_times), t, side="right") - 1
        return np.asarray(self.alpha_values, dtype=float)[np.clip(idx, 0, None)]

    def scaled(self, factor_alpha: float = 1.0, factor_beta: float = 1.0) -> "GrowthParams":
        return replace(
            self,
            beta=self.beta * factor_beta,
            alpha_values=tuple(a * factor_alpha for a in self.alpha_values),
        )

    def weighted_alpha_integral(self, spec, t0: float, t1: float) -> float:
        """``int_{t0}^{t1} exp(beta A_s) alpha_s dA_s``, exact for piecewise-linear ``A``."""
        pts = np.concatenate([[t0, t1], spec.breakpoints(), self.alpha_times])
        pts = np.unique(pts[(pts >= t0) & (pts <= t1)])
        a = spec.A(pts)
        al = self.alpha(0.5 * (pts[:-1] + pts[1:]))
        if self.beta == 0:
            return float(np.sum(al * np.diff(a)))
        growth = np.exp(self.beta * a)
        return float(np.sum(al * np.diff(growth)) / self.beta)

    def upper_envelope(self, t, y, u, phi):
        return j_lambda(u, self.lam, phi) / self.lam + self.alpha(t) + self.beta * np.abs(y)

    def lower_envelope(self, t, y, u, phi):
        return -j_lambda(-np.asarray(u), self.lam, phi) / self.lam - self.alpha(t) - self.beta * np.abs(y)


@dataclass(frozen=True, eq=False)
class Driver:
    name: str
    fn: Callable
    growth: GrowthParams
    convexity: str = CONVEX
    depends_on_y: bool = True
    lipschitz_u: float | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.convexity not in (CONVEX, CONCAVE):
            raise ValueError(f"unknown convexity flag {self.convexity!r}")

    def __call__(self, t, y, u, phi) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.broadcast_to(np.asarray(self.fn(t, y, u, np.asarray(phi, dtype=float)), dtype=float), y.shape)

    def scalar(self, t, y, u, phi) -> float:
        return float(self(t, np.array([y]), np.atleast_2d(u), phi)[0])


@dataclass(frozen=True, eq=False)
class TerminalCondition:
    """Markovian terminal value ``xi = g(N_T(e_1), ..., N_T(e_K))``."""

    g: Callable
    bound: float | None = None
    description: str = ""

    def __call__(self, counts) -> np.ndarray:
        counts = np.atleast_2d(np.asarray(counts))
        return np.broadcast_to(np.asarray(self.g(counts), dtype=float), counts.shape[:1]).copy()


# ---------------------------------------------------------------- catalog


def _params(text: str, n: int, defaults=()) -> list:
    vals = [float(v) for v in text.split(",")] if text else []
    missing = n - len(vals)
    if 0 < missing <= len(defaults):
        vals += list(defaults[len(defaults) - missing:])
    if len(vals) != n:
        raise ValueError(f"expected {n} parameters, got {text!r}")
    return vals


def make_driver(name: str, growth: GrowthParams | None = None) -> Driver:
    """Build a catalog driver from ``"kind:params"``.

    Catalog: ``zero``, ``constant:a``, ``entropic:lam``, ``neg_entropic:lam``,
    ``lipschitz_linear:beta,L[,alpha]``, ``affine_jump:a,b[,alpha]``.
    ``growth`` overrides the catalog's declared constants.
    """
    kind, _, arg = name.partition(":")
    if kind == "zero":
        d = Driver(name, lambda t, y, u, phi: np.zeros_like(y), GrowthParams(), depends_on_y=False, lipschitz_u=0.0)
    elif kind == "constant":
        (a,) = _params(arg, 1)
        d = Driver(
            name,
            lambda t, y, u, phi: np.full_like(y, a),
            GrowthParams.constant_alpha(abs(a)),
            depends_on_y=False,
            lipschitz_u=0.0,
        )
    elif kind == "entropic":
        (lam,) = _params(arg, 1)
        d = Driver(
            name,
            lambda t, y, u, phi: j_lambda(u, lam, phi) / lam,
            GrowthParams(lam=lam),
            depends_on_y=False,
        )
    elif kind == "neg_entropic":
        (lam,) = _params(arg, 1)
        d = Driver(
            name,
            lambda t, y, u, phi: -j_lambda(-u, lam, phi) / lam,
            GrowthParams(lam=lam),
            convexity=CONCAVE,
            depends_on_y=False,
        )
    elif kind == "lipschitz_linear":
        beta, L, alpha = _params(arg, 3, defaults=(0.0,))
        d = Driver(
            name,
            lambda t, y, u, phi: beta * y + L * weighted_norm(u, phi),
            GrowthParams.constant_alpha(alpha, beta=abs(beta)),
            depends_on_y=beta != 0,
            lipschitz_u=abs(L),
        )
    elif kind == "affine_jump":
        a, b, alpha = _params(arg, 3, defaults=(None,))
        alpha = abs(a) if alpha is None else alpha
        d = Driver(
            name,
            lambda t, y, u, phi: a + b * (u @ phi),
            GrowthParams.constant_alpha(alpha, c0=abs(b)),
            depends_on_y=False,
            lipschitz_u=abs(b),
        )
    else:
        raise ValueError(f"unknown driver {name!r}")
    return replace(d, growth=growth) if growth is not None else d


# ------------------------------------------------------ structure checks


@dataclass(frozen=True)
class SamplePlan:
    n_samples: int = 2000
    y_range: tuple = (-5.0, 5.0)
    u_range: tuple = (-3.0, 3.0)
    t_range: tuple = (0.0, 1.0)
    seed: int = 0
    phi: np.ndarray | Callable | None = None

    def draw(self, K: int):
        if self.n_samples < 1:
            raise ValueError("sample plan is empty")
        rng = np.random.default_rng(self.seed)
        n = self.n_samples
        t = rng.uniform(*self.t_range, size=n)
        y = rng.uniform(*self.y_range, size=(2, n))
        u = rng.uniform(*self.u_range, size=(2, n, K))
        theta = rng.uniform(0.0, 1.0, size=n)
        if callable(self.phi):
            phis = np.array([self.phi(ti) for ti in t])
        elif self.phi is not None:
            phis = np.broadcast_to(np.asarray(self.phi, float), (n, K))
        else:
            phis = rng.dirichlet(np.ones(K), size=n)
        return t, y, u, theta, phis


@dataclass
class StructureReport:
    verdicts: dict
    margins: dict
    worst: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def _eval_rows(d: Driver, t, y, u, phis) -> np.ndarray:
    return np.array([d.scalar(t[k], y[k], u[k], phis[k]) for k in range(t.size)])


def verify_structure(d: Driver, sampler: SamplePlan, tol: float = 1e-9) -> StructureReport:
    """Certify continuity, y-Lipschitz, growth envelope, convexity and the
    linear bound by random sampling.  Margins are the worst excess beyond
    the declared constant (H3b is reported per unit ``|y - y'|``)."""
    g = d.growth
    K = np.size(sampler.phi) if sampler.phi is not None and not callable(sampler.phi) else None
    K = K or _infer_K(sampler)
    t, y, u, theta, phis = sampler.draw(K)
    f11 = _eval_rows(d, t, y[0], u[0], phis)
    f21 = _eval_rows(d, t, y[1], u[0], phis)
    f12 = _eval_rows(d, t, y[0], u[1], phis)
    mix = theta[:, None] * u[0] + (1 - theta[:, None]) * u[1]
    fmix = _eval_rows(d, t, y[0], mix, phis)
    verdicts, margins, worst = {}, {}, {}

    def record(key, excess):
        excess = np.where(np.isnan(excess), np.inf, excess)
        k = int(np.argmax(excess))
        worst_val = float(excess[k])
        margins[key] = worst_val
        verdicts[key] = worst_val <= tol
        worst[key] = {"t": float(t[k]), "y": float(y[0, k]), "u": u[0, k].tolist()}

    # H3a: finiteness plus small-perturbation stability
    delta = 1e-7
    fpert = _eval_rows(d, t, y[0] + delta, u[0] + delta, phis)
    jump = np.abs(fpert - f11) - 1e-3
    jump[~np.isfinite(f11)] = np.inf
    record("H3a_continuity", jump)
    dy = np.abs(y[0] - y[1])
    excess_lip = np.abs(f11 - f21) - g.beta * dy
    k = int(np.argmax(excess_lip / np.maximum(dy, 1e-300)))
    margins["H3b_lipschitz_y"] = float(excess_lip[k] / max(dy[k], 1e-300))
    verdicts["H3b_lipschitz_y"] = bool(np.all(excess_lip <= tol))
    worst["H3b_lipschitz_y"] = {"t": float(t[k]), "y": float(y[0, k]), "y2": float(y[1, k]), "u": u[0, k].tolist()}
    up = np.array([g.upper_envelope(t[k], y[0, k], u[0, k], phis[k]) for k in range(t.size)])
    lo = np.array([g.lower_envelope(t[k], y[0, k], u[0, k], phis[k]) for k in range(t.size)])
    record("H3c_growth", np.maximum(f11 - up, lo - f11))
    chord = theta * f11 + (1 - theta) * f12
    record("H3e_convexity", fmix - chord if d.convexity == CONVEX else chord - fmix)
    zeros = np.zeros_like(y[0])
    f0u = _eval_rows(d, t, zeros, u[0], phis)
    f00 = _eval_rows(d, t, zeros, np.zeros_like(u[0]), phis)
    norm = weighted_norm(u[0], phis)
    if d.convexity == CONVEX:
        record("H4_linear_bound", -g.c0 * norm - (f0u - f00))
    else:
        record("H4_linear_bound", (f0u - f00) - g.c0 * norm)
    return StructureReport(verdicts, margins, worst, tol)


def _infer_K(sampler: SamplePlan) -> int:
    if callable(sampler.phi):
        return int(np.size(sampler.phi(sampler.t_range[0])))
    return 1


# ---------------------------------------------------- inf-convolution


@dataclass(frozen=True)
class SearchSpec:
    tol: float = 1e-11
    max_iter: int = 200


def _search_radius(d: Driver, n: float, t, y, u, phi, fu):
    """Bound on ``||u - r||_t`` for any ``r`` improving on ``r = u``.

    From the linear bound and y-Lipschitz: ``(n - C0) ||u - r|| <=
    f(t,y,u) - f(t,0,0) + beta|y| + C0 ||u||``.
    """
    g = d.growth
    f00 = d(t, np.zeros_like(y), np.zeros_like(u), phi)
    slack = np.maximum(fu - f00 + g.beta * np.abs(y) + g.c0 * weighted_norm(u, phi), 0.0)
    if n > g.c0:
        return slack / (n - g.c0), True
    return np.maximum(1.0, 10.0 * np.max(np.abs(u), axis=-1)) + slack / n, False


def _inf_convolution_1d(d: Driver, n, t, y, u, phi, search: SearchSpec, sign):
    """Vectorized golden-section search for K = 1 (``sign=-1`` for sup)."""
    w = np.sqrt(phi[0])

    def h(r):
        return sign * d(t, y, r[:, None], phi) + n * w * np.abs(u[:, 0] - r)

    fu = d(t, y, u, phi)
    base = sign * fu
    radius, certified = _search_radius(d, n, t, y, u, phi, fu) if sign > 0 else _concave_radius(d, n, t, y, u, phi, fu)
    radius = radius / max(w, 1e-300) + 1e-12
    out = base.copy()
    eps = 1e-7 * (1.0 + np.abs(u[:, 0]))
    local = (h(u[:, 0] + eps) >= base) & (h(u[:, 0] - eps) >= base)
    todo = ~local
    converged = True
    if np.any(todo):
        lo = (u[:, 0] - radius)[todo]
        hi = (u[:, 0] + radius)[todo]
        ys, us = y[todo], u[todo]
        invphi = (np.sqrt(5.0) - 1.0) / 2.0

        def hh(r):
            return sign * d(t, ys, r[:, None], phi) + n * w * np.abs(us[:, 0] - r)

        c = hi - invphi * (hi - lo)
        e = lo + invphi * (hi - lo)
        fc, fe = hh(c), hh(e)
        for _ in range(search.max_iter):
            if np.all(hi - lo <= search.tol * (1.0 + np.abs(us[:, 0]))):
                break
            left = fc < fe
            hi = np.where(left, e, hi)
            lo = np.where(left, lo, c)
            p = np.where(left, hi - invphi * (hi - lo), lo + invphi * (hi - lo))
            fp = hh(p)
            c, e, fc, fe = (
                np.where(left, p, e),
                np.where(left, c, p),
                np.where(left, fp, fe),
                np.where(left, fc, fp),
            )
        else:
            converged = False
        best = np.minimum(np.minimum(fc, fe), hh(0.5 * (lo + hi)))
        out[todo] = np.minimum(best, base[todo])
    return sign * out, converged, certified


def _concave_radius(d: Driver, n, t, y, u, phi, fu):
    neg = replace(d, fn=lambda tt, yy, uu, pp: -d.fn(tt, yy, uu, pp), convexity=CONVEX)
    return _search_radius(neg, n, t, y, u, phi, -fu)


def _inf_convolution_nd(d: Driver, n, t, y, u, phi, search: SearchSpec, sign):
    """Per-state bounded Powell search from ``r = u`` and ``r = 0`` for K > 1."""
    fu = d(t, y, u, phi)
    radius, certified = _search_radius(d, n, t, y, u, phi, fu) if sign > 0 else _concave_radius(d, n, t, y, u, phi, fu)
    out = sign * fu
    converged = True
    active = phi > 0
    scale = np.where(active, 1.0 / np.sqrt(np.where(active, phi, 1.0)), 0.0)
    for s in range(y.size):
        ys = y[s : s + 1]

        def h(r):
            rr = u[s].copy()
            rr[active] = r
            return sign * float(d(t, ys, rr[None, :], phi)[0]) + n * float(weighted_norm(u[s] - rr, phi))

        box = radius[s] * scale[active] + 1e-12
        bounds = list(zip(u[s][active] - box, u[s][active] + box))
        best = out[s]
        for start in (u[s][active], np.clip(np.zeros(active.sum()), [b[0] for b in bounds], [b[1] for b in bounds])):
            res = optimize.minimize(
                h, start, method="Powell", bounds=bounds, options={"xtol": search.tol, "ftol": search.tol * 1e-2, "maxiter": search.max_iter * 50}
            )
            converged &= bool(res.success)
            best = min(best, float(res.fun))
        out[s] = best
    return sign * out, converged, certified


def inf_convolution(d: Driver, n: float, t, y, u, phi, search: SearchSpec | None = None):
    """Moreau-type regularization ``inf_r {f(t,y,r) + n ||u - r||_t}``.

    Concave drivers use the mirror ``sup_r {f(t,y,r) - n ||u - r||_t}``.
    Returns ``(value, converged)`` where ``value`` is an array over the rows of
    ``y``/``u``; ``converged`` is False when the inner search hit its
    iteration cap.
    """
    if not n > 0:
        raise ValueError("n must be positive")
    search = search or SearchSpec()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    phi = np.asarray(phi, dtype=float)
    sign = 1.0 if d.convexity == CONVEX else -1.0
    solver = _inf_convolution_1d if u.shape[1] == 1 else _inf_convolution_nd
    value, converged, _ = solver(d, n, t, y, u, phi, search, sign)
    if not converged:
        log.warning("inf-convolution search for %s at n=%g hit the iteration cap", d.name, n)
    return value, converged


def regularized_driver(d: Driver, n: float, search: SearchSpec | None = None) -> Driver:
    """Driver ``f^n``; constants become ``(3 alpha, 3 beta)``, ``C0`` kept.

    ``diagnostics['degraded']`` counts layer evaluations whose inner search
    did not converge.
    """
    search = search or SearchSpec()
    diag = {"degraded": 0, "n": n, "search_tol": search.tol, "certified": n > d.growth.c0}

    def fn(t, y, u, phi):
        value, ok = inf_convolution(d, n, t, y, u, phi, search)
        if not ok:
            diag["degraded"] += 1
        return value

    return Driver(
        f"{d.name}^n={n:g}",
        fn,
        d.growth.scaled(3.0, 3.0),
        convexity=d.convexity,
        depends_on_y=d.depends_on_y,
        lipschitz_u=n,
        diagnostics=diag,
    )


# ------------------------------------------------------- truncations


def clamp_driver(d: Driver, k: float) -> Driver:
    """``min(max(f, -k), k)``; the declared flags are inherited unchanged."""
    if not k > 0:
        raise ValueError("k must be positive")
    return replace(
        d,
        name=f"clamp({d.name},{k:g})",
        fn=lambda t, y, u, phi: np.clip(d.fn(t, y, u, phi), -k, k),
        diagnostics={},
    )


def clamp_terminal(xi: TerminalCondition, n: float) -> TerminalCondition:
    if not n > 0:
        raise ValueError("n must be positive")
    return TerminalCondition(
        lambda counts: np.clip(xi(counts), -n, n),
        bound=n if xi.bound is None else min(n, xi.bound),
        description=f"clamp({xi.description},{n:g})",
    )


def shift_driver(d: Driver, n: float) -> Driver:
    """``f - f(t,0,0) + clip(f(t,0,0), -n, n)``."""
    if not n > 0:
        raise ValueError("n must be positive")

    def fn(t, y, u, phi):
        f00 = d.fn(t, np.zeros(1), np.zeros((1, u.shape[1])), phi)
        f00 = float(np.asarray(f00).ravel()[0])
        return d.fn(t, y, u, phi) - f00 + min(max(f00, -n), n)

    return replace(d, name=f"shift({d.name},{n:g})", fn=fn, diagnostics={})
