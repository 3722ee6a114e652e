"""Derived observables: occupation entropy, ring current, scaling fits.

Everything here works on plain arrays (or the tabulated sweep points
produced by the CLI) and is independent of which engine generated them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

CLAMP = 1e-12
DENSITY_SLACK = 1e-9


def classical_entropy(densities: np.ndarray) -> float:
    """Shannon entropy (nats) of independent site occupations.

    S_cl = -sum_i [n_i ln n_i + (1-n_i) ln(1-n_i)], with occupations
    clamped to [1e-12, 1-1e-12]. Values outside [0, 1] by more than 1e-9
    indicate corrupted input and raise.
    """
    n = np.asarray(densities, dtype=float)
    if n.size and (n.min() < -DENSITY_SLACK or n.max() > 1.0 + DENSITY_SLACK):
        raise NumericError(
            f"density outside [0, 1]: min={n.min():.3e} max={n.max():.3e}"
        )
    x = np.clip(n, CLAMP, 1.0 - CLAMP)
    return float(-np.sum(x * np.log(x) + (1.0 - x) * np.log(1.0 - x)))


def current(k: np.ndarray, nk: np.ndarray) -> float:
    """Particle current J = integral dk/(2pi) * 2pi * v_k n_k, v_k = sin k.

    Riemann sum over the L-point momentum grid: J = (2 pi / L) * sum_k
    sin(k) n_k. Fully occupied negative-k modes give J -> -2 for large L
    (exactly -(2 pi / L) cot(pi / L) on the finite grid), which pins the
    normalization and sign convention.
    """
    k = np.asarray(k, dtype=float)
    nk = np.asarray(nk, dtype=float)
    if k.shape != nk.shape:
        raise ConfigError("k and n_k must have matching shapes")
    return float(2.0 * np.pi / k.size * np.sum(np.sin(k) * nk))


@dataclass(frozen=True)
class ScalingPoint:
    """One steady-state sweep point."""

    theta: float
    gamma: float
    L: int
    scl: float
    scl_err: float = 0.0


@dataclass(frozen=True)
class AsymptoteFit:
    theta: float
    c: float
    c_err: float
    n_points: int


def _fit_c(points: "list[ScalingPoint]") -> tuple[float, float]:
    # model log S = log c - log gamma, i.e. intercept-only fit in log space
    logs = np.array([math.log(p.scl) + math.log(p.gamma) for p in points])
    logc = float(logs.mean())
    spread = float(logs.std(ddof=1)) / math.sqrt(len(logs)) if len(logs) > 1 else 0.0
    c = math.exp(logc)
    return c, c * spread


def fit_asymptote(points: "list[ScalingPoint]") -> "list[AsymptoteFit]":
    """Fit S_cl = c / gamma per theta group, approximating L -> infinity.

    For each gamma only data at sufficiently large L should contribute;
    starting from all sizes, the smallest remaining L is dropped until the
    fitted c moves by less than its own uncertainty (or a single size
    remains). Requires at least 3 gamma points per theta.
    """
    fits = []
    for theta in sorted({p.theta for p in points}):
        group = [p for p in points if p.theta == theta]
        if any(p.scl <= 0 or p.gamma <= 0 for p in group):
            raise ConfigError("asymptote fit needs positive gamma and S_cl")
        sizes = sorted({p.L for p in group})
        sel = list(group)
        c, c_err = _fit_c(sel)
        for floor in sizes[1:]:
            kept = [p for p in sel if p.L >= floor]
            if len({p.gamma for p in kept}) < 3:
                break
            c_new, err_new = _fit_c(kept)
            if abs(c_new - c) <= max(err_new, 1e-12):
                break  # stable: smaller sizes no longer bias the fit
            sel, c, c_err = kept, c_new, err_new
        if len({p.gamma for p in sel}) < 3:
            raise ConfigError(
                f"asymptote fit for theta={theta:g} needs >= 3 gamma points"
            )
        fits.append(AsymptoteFit(theta=theta, c=c, c_err=c_err, n_points=len(sel)))
    return fits


@dataclass
class CollapseResult:
    """Rescaled curves (gamma L, S_cl / L) and their mutual RMS spread."""

    x: np.ndarray
    y: np.ndarray
    L: np.ndarray
    gamma: np.ndarray
    spread: float
    n_curves: int


def scaling_collapse(
    points: "list[ScalingPoint]",
    exclude_gamma_at_least: "float | None" = 1.0,
    grid_size: int = 33,
) -> CollapseResult:
    """Collapse steady-state entropies onto the single-parameter form.

    Emits x = gamma*L, y = S_cl/L for every point (optionally dropping the
    large-gamma outliers, which sit outside the scaling regime). The
    quality metric interpolates each fixed-L curve onto a common
    log-spaced grid inside the shared x range and takes the RMS of the
    across-curve standard deviation; 0 means a perfect collapse.
    """
    kept = [
        p for p in points
        if exclude_gamma_at_least is None or p.gamma < exclude_gamma_at_least
    ]
    if not kept:
        raise ConfigError("no points left to collapse")
    x = np.array([p.gamma * p.L for p in kept])
    y = np.array([p.scl / p.L for p in kept])
    Ls = np.array([p.L for p in kept])
    gs = np.array([p.gamma for p in kept])

    curves = []
    for Lval in np.unique(Ls):
        m = Ls == Lval
        if m.sum() >= 2:
            order = np.argsort(x[m])
            curves.append((np.log(x[m][order]), np.log(y[m][order])))
    spread = math.nan
    if len(curves) >= 2:
        lo = max(c[0][0] for c in curves)
        hi = min(c[0][-1] for c in curves)
        if hi > lo:
            grid = np.linspace(lo, hi, grid_size)
            vals = np.stack([np.interp(grid, cx, cy) for cx, cy in curves])
            spread = float(np.sqrt(np.mean(np.exp(vals).std(axis=0, ddof=0) ** 2)))
    return CollapseResult(
        x=x, y=y, L=Ls, gamma=gs, spread=spread, n_curves=len(curves)
    )


def steady_slope(times: np.ndarray, values: np.ndarray, window: float) -> float:
    """Least-squares slope of values(t) over the trailing window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    m = times >= times[-1] - window
    if m.sum() < 2:
        raise ConfigError("steady-state window contains fewer than 2 samples")
    return float(np.polyfit(times[m], values[m], 1)[0])


def steady_mean(times: np.ndarray, values: np.ndarray, frac: float = 1.0 / 3.0):
    """Average of values(t) over the trailing fraction of the time grid.

    Returns (mean, stderr_of_mean_proxy); samples are time correlated, so
    the proxy uses the sample spread without claiming independence.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t0 = times[-1] - frac * (times[-1] - times[0])
    m = times >= t0
    vals = values[m]
    if vals.size == 0:
        raise ConfigError("empty steady-state window")
    err = float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return float(vals.mean()), err
