"""Figure rendering for run outputs. Uses the Agg backend and writes PNG
files next to the delimited data they visualize; nothing opens a window."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import PLOT_SPECS, read_plot_csv

_AXIS_LABEL = {
    "n_steps": "attack iterations N",
    "epsilon": "perturbation budget (L-inf)",
    "fid": "FID (macro over classes)",
    "precision": "k-NN precision",
}


def _median_curve(rows: list, x_key: str, y_key: str):
    xs = sorted({r[x_key] for r in rows})
    med = [float(np.median([r[y_key] for r in rows if r[x_key] == v]))
           for v in xs]
    return xs, med


def render_figure(csv_path, png_path=None) -> str | None:
    """Scatter per-seed cells and overlay the 3-seed median curve."""
    name = os.path.basename(str(csv_path))
    spec = PLOT_SPECS.get(name)
    if spec is None:
        return None
    rows = read_plot_csv(csv_path)
    png_path = png_path or str(csv_path)[: -len(".csv")] + ".png"
    x_key, y_key = spec["x"], spec["y"]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    if rows:
        for r in rows:
            ax.scatter(r[x_key], r[y_key], s=18, color="tab:gray", alpha=0.6)
        xs, med = _median_curve(rows, x_key, y_key)
        ax.plot(xs, med, "o-", color="tab:blue", label="median over seeds")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel(_AXIS_LABEL.get(x_key, x_key))
    ax.set_ylabel(_AXIS_LABEL.get(y_key, y_key))
    ax.set_title(spec["description"], fontsize=9)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def render_run_figures(out_dir) -> list:
    """Render every known figure whose CSV exists in out_dir."""
    written = []
    for fname in PLOT_SPECS:
        path = os.path.join(out_dir, fname)
        if os.path.exists(path):
            png = render_figure(path)
            if png:
                written.append(png)
    return written


def plot_loss_curve(curve, png_path, title="training loss") -> str:
    curve = np.asarray(curve, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.plot(np.arange(1, curve.size + 1), curve, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return str(png_path)


def image_grid(images, png_path, cols: int = 10, title=None) -> str:
    """Tile [N, H, W] (or flat-square) grayscale images into one figure."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        side = int(round(arr.shape[1] ** 0.5))
        arr = arr.reshape(arr.shape[0], side, side)
    n = arr.shape[0]
    cols = max(1, min(cols, n))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.9, rows * 0.9))
    axes = np.atleast_1d(axes).reshape(rows, cols)
    for i in range(rows * cols):
        ax = axes[i // cols, i % cols]
        ax.axis("off")
        if i < n:
            ax.imshow(arr[i], cmap="gray", vmin=0.0, vmax=1.0)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return str(png_path)
