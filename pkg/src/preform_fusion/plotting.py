"""Figures for experiment reports.

Every figure is written as SVG with a fixed hash salt and no date stamp so
identical inputs produce identical files. The numbers behind each figure
are also exported as CSV by the report writer.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "preform-fusion",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.3,
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_training_curves(histories: dict, path, title: str = "") -> None:
    """Training loss (log scale) and validation R² per epoch, one line per model."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_r2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for name, h in histories.items():
            epochs = np.arange(1, len(h.train_loss) + 1)
            ax_loss.plot(epochs, h.train_loss, label=name)
            r2 = [np.nan if v is None else v for v in h.val_r2]
            ax_r2.plot(epochs, r2, label=name)
        ax_loss.set_yscale("log")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("training loss (scaled MSE)")
        ax_r2.set_xlabel("epoch")
        ax_r2.set_ylabel("validation R²")
        ax_r2.set_ylim(0.8, 1.0)
        ax_r2.legend(frameon=False, loc="lower right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def plot_metric_bars(evaluations: dict, path, metric: str = "rmse") -> None:
    """Grouped bars of one metric per evaluation set and model."""
    sets = list(evaluations)
    models = sorted({m for e in evaluations.values() for m in e["models"]})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 2.8))
        width = 0.8 / max(len(models), 1)
        x = np.arange(len(sets))
        for i, name in enumerate(models):
            vals = [evaluations[s]["models"].get(name, {}).get(metric, np.nan) for s in sets]
            vals = [np.nan if v is None else v for v in vals]
            ax.bar(x + (i - (len(models) - 1) / 2) * width, vals, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(sets, rotation=15, ha="right")
        ax.set_ylabel(f"{metric.upper()} [°C]" if metric != "r2" else "R²")
        ax.legend(frameon=False, ncol=min(len(models), 5), fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_profiles(profiles: dict, path, positions=None, title: str = "") -> None:
    """Temperature along the preform, neck (left) to tip (right)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        for label, values in profiles.items():
            z = np.arange(len(values)) if positions is None else positions
            ax.plot(z, values, label=label)
        ax.set_xlabel("surface point" if positions is None else "axial position [mm]")
        ax.set_ylabel("temperature [°C]")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_cp_curves(curves, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        for c in curves:
            ax.plot(c.temps, c.cps, marker="o", markersize=3, label=c.label)
        ax.set_xlabel("temperature [°C]")
        ax.set_ylabel("heat capacity [J/kg°C]")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_architecture_comparison(rmse_plain, rmse_skip, path) -> None:
    """Per-seed test RMSE of the plain MLP against the residual variant."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        seeds = np.arange(len(rmse_plain))
        ax.plot(seeds, rmse_plain, "o-", label="standard MLP")
        ax.plot(seeds, rmse_skip, "s-", label="MLP with skip connections")
        ax.set_xlabel("seed")
        ax.set_ylabel("test RMSE [°C]")
        ax.set_xticks(seeds)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
