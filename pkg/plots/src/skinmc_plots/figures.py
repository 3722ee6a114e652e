"""Figure builders for the five output kinds.

All figures render with a pinned size, font, and colormap so that byte
hashes are stable across repeated renders of the same inputs. Density
heatmaps map occupation 0 -> dark, 1 -> light (viridis); this is fixed
by design, not configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reading import (
    SchemaError,
    collapse_records,
    fit_records,
    observable_matrix,
    observable_series,
    scaling_records,
)

FIGSIZE = (6.0, 4.0)
DPI = 150
_METADATA = {"Software": "skinmc-plots"}

plt.rcParams.update({
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "svg.hashsalt": "skinmc-plots",
})


@dataclass(frozen=True)
class FigureSpec:
    """One render request: figure kind, input CSVs, output image path."""

    kind: str
    inputs: "tuple[Path, ...]"
    output: Path
    title: "str | None" = None
    xlim: "tuple[float, float] | None" = None
    ylim: "tuple[float, float] | None" = None


def _new_axes():
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    return fig, ax


def _finish(fig, ax, spec: FigureSpec):
    if spec.title:
        ax.set_title(spec.title)
    if spec.xlim:
        ax.set_xlim(*spec.xlim)
    if spec.ylim:
        ax.set_ylim(*spec.ylim)
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, metadata=_METADATA)
    plt.close(fig)


def draw_heatmap(spec: FigureSpec):
    """Site-resolved density over time as an image; returns the matrix."""
    (path,) = spec.inputs
    times, sites, dens = observable_matrix(path, "density")
    fig, ax = _new_axes()
    im = ax.imshow(
        dens,
        origin="lower",
        aspect="auto",
        cmap="viridis",
        vmin=0.0,
        vmax=1.0,
        extent=(sites[0] - 0.5, sites[-1] + 0.5, times[0], times[-1]),
    )
    fig.colorbar(im, ax=ax, label="site occupation")
    ax.set_xlabel("site")
    ax.set_ylabel("time")
    _finish(fig, ax, spec)
    return times, sites, dens


def draw_scaling(spec: FigureSpec):
    """Steady quarter-cut entropy against system size, one curve per rate."""
    (path,) = spec.inputs
    rows = scaling_records(path)
    fig, ax = _new_axes()
    for gamma in sorted({r["gamma"] for r in rows}):
        pts = sorted(
            (r["L"], r["cut_entropy_mean"], r["cut_entropy_stderr"])
            for r in rows
            if r["gamma"] == gamma
        )
        L, S, err = zip(*pts)
        ax.errorbar(L, S, yerr=err, marker="o", capsize=2,
                    label=f"rate {gamma:g}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("L")
    ax.set_ylabel("S(L/4)")
    ax.legend()
    _finish(fig, ax, spec)
    return rows


def draw_loglog(spec: FigureSpec):
    """Steady occupation entropy vs rate on log axes, with 1/gamma guides.

    A second input CSV (fits schema) adds dashed c/gamma lines; their
    intercept at gamma=1 reads off the fitted coefficient.
    """
    if not 1 <= len(spec.inputs) <= 2:
        raise SchemaError("loglog takes the scaling CSV plus an optional fits CSV")
    rows = scaling_records(spec.inputs[0])
    fig, ax = _new_axes()
    for L in sorted({r["L"] for r in rows}):
        pts = sorted(
            (r["gamma"], r["scl_mean"], r["scl_stderr"])
            for r in rows
            if r["L"] == L
        )
        g, S, err = zip(*pts)
        ax.errorbar(g, S, yerr=err, marker="o", capsize=2, label=f"L={int(L)}")
    if len(spec.inputs) == 2:
        gammas = np.array(sorted({r["gamma"] for r in rows}))
        for fit in fit_records(spec.inputs[1]):
            ax.plot(gammas, fit["c"] / gammas, "--", color="0.4",
                    label=f"{fit['c']:.2f}/rate")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("measurement rate")
    ax.set_ylabel("steady occupation entropy")
    ax.legend()
    _finish(fig, ax, spec)
    return rows


def draw_collapse(spec: FigureSpec):
    """Rescaled entropy y = S_cl/L against x = gamma L, one marker set per L."""
    (path,) = spec.inputs
    rows = collapse_records(path)
    fig, ax = _new_axes()
    for L in sorted({r["L"] for r in rows}):
        pts = sorted((r["x"], r["y"]) for r in rows if r["L"] == L)
        x, y = zip(*pts)
        ax.plot(x, y, marker="s", linestyle="none", label=f"L={int(L)}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("rate * L")
    ax.set_ylabel("S_cl / L")
    ax.legend()
    _finish(fig, ax, spec)
    return rows


def draw_momentum(spec: FigureSpec):
    """Late-time momentum occupation n_k; one curve per input run."""
    fig, ax = _new_axes()
    drawn = []
    for path in spec.inputs:
        t, m, nk = observable_series(path, "nk")
        last = t == t.max()
        m, nk = m[last], nk[last]
        L = m.size
        order = np.argsort(m)
        k = 2.0 * math.pi * m[order] / L
        ax.plot(k / math.pi, nk[order], marker=".",
                label=Path(path).parent.name or Path(path).stem)
        drawn.append((k, nk[order]))
    ax.set_xlabel("k / pi")
    ax.set_ylabel("n_k")
    ax.axhline(0.5, color="0.8", lw=0.8, zorder=0)
    ax.legend()
    _finish(fig, ax, spec)
    return drawn


_KINDS = {
    "heatmap": draw_heatmap,
    "scaling": draw_scaling,
    "loglog": draw_loglog,
    "collapse": draw_collapse,
    "momentum": draw_momentum,
}


def render(spec: FigureSpec):
    """Render one figure to spec.output; returns the drawn data."""
    if spec.kind not in _KINDS:
        raise SchemaError(
            f"unknown figure kind {spec.kind!r}; choose from {sorted(_KINDS)}"
        )
    if not spec.inputs:
        raise SchemaError("no input CSVs given")
    if spec.kind != "momentum" and spec.kind != "loglog" and len(spec.inputs) != 1:
        raise SchemaError(f"{spec.kind} takes exactly one input CSV")
    return _KINDS[spec.kind](spec)
