"""SVG figures for the CLI report path.

Output is byte-stable for identical inputs: the SVG id salt is fixed and the
date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib import ticker  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import Overlay, QQPoints  # noqa: E402
from .ite import ITEResult  # noqa: E402
from .nonparam import StepSurvival  # noqa: E402

__all__ = ["save_svg", "plot_km", "plot_forest", "plot_ite", "plot_overlays", "plot_qq"]

_STYLE = {
    "svg.hashsalt": "aftite",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def save_svg(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "aftite"}, bbox_inches="tight")
    plt.close(fig)
    return path


def _step_xy(curve: StepSurvival, start: float = 0.0):
    x = np.concatenate([[start], curve.times])
    y = np.concatenate([[1.0], curve.survival])
    return x, y


def plot_km(curves: Mapping[str, StepSurvival], path, labels: Mapping[str, str] | None = None,
            p_value: float | None = None, xlabel: str = "Months") -> Path:
    labels = labels or {}
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in sorted(curves):
            x, y = _step_xy(curves[key])
            ax.step(x, y, where="post", label=labels.get(key, key))
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Survival probability")
        ax.set_ylim(0, 1.02)
        if p_value is not None:
            ax.text(0.98, 0.95, f"log-rank p = {p_value:.3f}", transform=ax.transAxes, ha="right", va="top")
        ax.legend(frameon=False)
    return save_svg(fig, path)


def plot_forest(rows: Sequence[Mapping], path, title: str = "") -> Path:
    """Time ratios with Wald intervals on a log axis; one row per term."""
    rows = [r for r in rows if r.get("role") not in ("intercept", "scale")]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 0.35 * len(rows) + 1.2))
        ys = np.arange(len(rows))[::-1]
        for y, r in zip(ys, rows):
            ax.plot([r["tr_lower"], r["tr_upper"]], [y, y], color="black", lw=1)
            ax.plot([r["time_ratio"]], [y], "s", color="black", ms=4)
        ax.axvline(1.0, color="grey", ls="--", lw=0.8)
        ax.set_xscale("log")
        ax.xaxis.set_major_formatter(ticker.FuncFormatter(lambda v, _: f"{v:g}"))
        ax.set_yticks(ys)
        ax.set_yticklabels([r["term"] for r in rows])
        ax.set_xlabel("Time ratio (95% CI)")
        if title:
            ax.set_title(title)
    return save_svg(fig, path)


def plot_ite(delta: Sequence[ITEResult], path, bootstrap: Sequence[ITEResult] | None = None,
             xlabel: str | None = None) -> Path:
    """Time ratio over one modifier with the delta-method band and, if given, the bootstrap band."""
    x = np.array([r.value for r in delta], dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(x, [r.time_ratio for r in delta], color="black", label="time ratio")
        ax.fill_between(x, [r.ci_lower for r in delta], [r.ci_upper for r in delta], alpha=0.25,
                        label="delta-method CI")
        if bootstrap:
            xb = np.array([r.value for r in bootstrap], dtype=float)
            ax.plot(xb, [r.ci_lower for r in bootstrap], ls="--", color="tab:red", label="bootstrap CI")
            ax.plot(xb, [r.ci_upper for r in bootstrap], ls="--", color="tab:red")
        ax.axhline(1.0, color="grey", lw=0.8)
        ax.set_xlabel(xlabel or (delta[0].modifier if delta else ""))
        ax.set_ylabel("Time ratio (treated / control)")
        ax.legend(frameon=False)
    return save_svg(fig, path)


def plot_overlays(overlays: Mapping[str, Overlay], path) -> Path:
    """One panel per model: KM of residuals against the law's survival."""
    keys = list(overlays)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.4), squeeze=False)
        for ax, key in zip(axes[0], keys):
            ov = overlays[key]
            x, y = _step_xy(ov.km, start=float(ov.grid[0]))
            ax.step(x, y, where="post", color="black", label="Kaplan-Meier")
            ax.plot(ov.grid, ov.reference, color="tab:red", label=f"{ov.dist} G(z)")
            ax.set_title(f"{key} (sup = {ov.sup:.3f})")
            ax.set_xlabel("Standardized residual z")
        axes[0][0].set_ylabel("Survival")
        axes[0][0].legend(frameon=False)
    return save_svg(fig, path)


def plot_qq(panels: Mapping[str, QQPoints], path) -> Path:
    keys = list(panels)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.6), squeeze=False)
        for ax, key in zip(axes[0], keys):
            q = panels[key]
            ax.plot(q.model, q.empirical, "o", ms=2.5, color="black")
            top = float(max(q.model.max(), q.empirical.max()))
            ax.plot([0, top], [0, top], color="tab:red", lw=0.8)
            ax.set_title(key)
            ax.set_xlabel("Model quantile")
        axes[0][0].set_ylabel("Kaplan-Meier quantile")
    return save_svg(fig, path)
