"""SVG figures for sweep results. The metrics CSV stays the source of truth."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import datagen  # noqa: E402

log = logging.getLogger(__name__)

# fixed salt and no date stamp keep reruns byte-identical
plt.rcParams.update({
    "svg.hashsalt": "ptcate",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.0, 3.0),
})
_SVG_META = {"Date": None}

METRIC_LABELS = {"pehe": "PEHE", "policy_loss": "Policy loss"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def cate_roots(dgp: str, lo: float = -0.5, hi: float = 0.5, n: int = 100001) -> list[float]:
    """Sign changes of the true CATE on a dense grid."""
    if dgp in ("fig2_sigmoid", "settingA"):
        return [datagen.SIGMOID_ROOT]
    spec = datagen.DGPSpec(dgp)
    x = np.linspace(lo, hi, n)
    t = datagen.true_cate(spec, x)
    idx = np.flatnonzero(np.sign(t[:-1]) != np.sign(t[1:]))
    return [float(0.5 * (x[i] + x[i + 1])) for i in idx]


def metric_figure(summary: dict, kind: str, metric: str):
    """Mean of ``metric`` over seeds against gamma, with a one-standard-error band."""
    gammas = sorted(g for (k, g) in summary if k == kind)
    mean = np.array([summary[(kind, g)][metric][0] for g in gammas])
    se = np.array([summary[(kind, g)][metric][1] for g in gammas])
    fig, ax = plt.subplots()
    ax.plot(gammas, mean, marker="o", color="C0")
    ax.fill_between(gammas, mean - se, mean + se, color="C0", alpha=0.25, linewidth=0)
    ax.set_xlabel(r"$\gamma$")
    ax.set_ylabel(METRIC_LABELS.get(metric, metric))
    ax.set_title(kind)
    return fig


def metric_vs_gamma(summary: dict, kind: str, metric: str, path: Path) -> Path:
    return _save(metric_figure(summary, kind, metric), path)


def overlay_figure(curves: dict, kind: str, dgp: str, gammas, seed: int | None = None):
    """True CATE against fitted curves of one seed; dotted lines mark the true roots."""
    grid = np.linspace(-0.5, 0.5, 201)
    spec = datagen.DGPSpec(dgp)
    seeds = sorted({s for (k, s, _) in curves if k == kind})
    seed = seeds[0] if seed is None else seed
    fig, ax = plt.subplots()
    ax.plot(grid, datagen.true_cate(spec, grid), color="C3", lw=2, label="true CATE")
    for i, g in enumerate(gammas):
        key = (kind, seed, g)
        if key in curves:
            ax.plot(grid, curves[key], ls="--" if g == 0 else "-", color=f"C{i}" if i < 3 else f"C{i + 1}",
                    label=rf"$\gamma={g:g}$")
    ax.axhline(0.0, color="grey", lw=0.6)
    for r in cate_roots(dgp):
        ax.axvline(r, color="C3", lw=0.8, ls=":")
    ax.set_xlabel("x")
    ax.set_ylabel("CATE")
    ax.set_title(f"{kind}, seed {seed}")
    ax.legend(frameon=False, fontsize=7)
    return fig


def cate_overlay(curves: dict, kind: str, dgp: str, gammas, path: Path, seed: int | None = None) -> Path:
    return _save(overlay_figure(curves, kind, dgp, gammas, seed), path)


def emit_plots(result, out_dir, overlay_gammas=None) -> set[Path]:
    """Write per-kind metric charts and, for 1-D synthetic data, CATE overlays."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    kinds = sorted({k for (k, _) in summary})
    if not kinds:
        log.warning("no results to plot")
        return set()
    written = set()
    for kind in kinds:
        for metric in METRIC_LABELS:
            try:
                written.add(metric_vs_gamma(summary, kind, metric, out / f"{metric}_vs_gamma_{kind}.svg"))
            except Exception as exc:  # noqa: BLE001 - plots are best effort
                log.warning("plot %s/%s failed: %s", kind, metric, exc)
    dgp = result.extra.get("dgp")
    if result.curves and dgp in datagen.DGP_NAMES:
        gammas = sorted({g for (_, _, g) in result.curves})
        if overlay_gammas is None:
            overlay_gammas = [g for g in gammas if g in (0.0, 0.9, 0.98)] or gammas
        for kind in kinds:
            try:
                written.add(cate_overlay(result.curves, kind, dgp, overlay_gammas, out / f"cate_overlay_{kind}.svg"))
            except Exception as exc:  # noqa: BLE001
                log.warning("overlay %s failed: %s", kind, exc)
    return written
