"""Static figures for CLI reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_counts", "plot_value_field", "plot_reflection", "plot_convergence", "plot_suite"]

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_counts(totals, mean: float, path) -> Path:
    """Histogram of ``N_T`` against the Poisson pmf with the compensator mean."""
    from scipy import stats

    totals = np.asarray(totals, dtype=int)
    top = int(max(totals.max(initial=0), stats.poisson.isf(1e-4, mean) if mean > 0 else 0)) + 1
    ks = np.arange(top + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(ks, np.bincount(totals, minlength=top + 1)[: top + 1] / max(totals.size, 1), color="0.7", label="empirical")
    pmf = stats.poisson.pmf(ks, mean) if mean > 0 else (ks == 0).astype(float)
    ax.plot(ks, pmf, "o-", color="C3", ms=3, label=f"Poisson({mean:.3g})")
    ax.set_xlabel("total count at T")
    ax.set_ylabel("frequency")
    ax.legend()
    return _save(fig, path)


def plot_value_field(times, y, totals, path, max_curves: int = 6) -> Path:
    """``y(t, n)`` against ``t`` for the first few count totals."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    order = np.argsort(totals, kind="stable")[:max_curves]
    for s in order:
        ax.plot(times, y[:, s], lw=1.2, label=f"n={int(totals[s])}")
    ax.set_xlabel("t")
    ax.set_ylabel("y(t, n)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_reflection(times, K, margins, path) -> Path:
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(5, 4.4), sharex=True)
    a1.plot(times, K, color="C0")
    a1.set_ylabel("K(t)")
    a2.plot(times, margins, color="C2")
    a2.axhline(0.0, color="0.5", lw=0.8)
    a2.set_ylabel("E[l(t, Y_t)]")
    a2.set_xlabel("t")
    return _save(fig, path)


def plot_convergence(dts, errors, path, order: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    errs = np.maximum(np.asarray(errors, dtype=float), 1e-17)
    ax.loglog(dts, errs, "o-")
    ax.set_xlabel("dt")
    ax.set_ylabel("|Y0 - oracle|")
    if order is not None:
        ax.set_title(f"fitted order {order:.3f}")
    return _save(fig, path)


def plot_suite(ids, margins, tolerances, ok, path) -> Path:
    """Worst margin minus tolerance per check (negative = inside tolerance)."""
    vals = np.asarray(margins, dtype=float) - np.asarray(tolerances, dtype=float)
    vals = np.clip(np.nan_to_num(vals, posinf=1.0, neginf=-1.0), -1.0, 1.0)
    fig, ax = plt.subplots(figsize=(6, 0.28 * len(ids) + 1.2))
    ax.barh(range(len(ids)), vals, color=["C2" if k else "C3" for k in ok])
    ax.set_yticks(range(len(ids)), ids, fontsize=7)
    ax.axvline(0.0, color="0.3", lw=0.8)
    ax.set_xlabel("margin - tolerance (clipped to [-1, 1])")
    return _save(fig, path)
