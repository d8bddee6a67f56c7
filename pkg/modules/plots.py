# modules/plots.py
"""Static run images: archive fitness heatmaps (PIL) and metric line charts (matplotlib)."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

EMPTY_COLOR = (24, 22, 30)
HEATMAP_SIDE = 600
CHART_METRICS = ("coverage", "diversity", "grid_mean_fitness", "goal_switches")


# ---------- heatmaps ----------

def heatmap_image(grid: np.ndarray, side: int = HEATMAP_SIDE, cmap: str = "viridis",
                  vmin: Optional[float] = None, vmax: Optional[float] = None) -> Image.Image:
    """
    Render a 2D array to an RGB image; NaN cells (empty) get a dark
    background. Rows run top to bottom.
    """
    grid = np.asarray(grid, dtype=np.float64)
    empty = ~np.isfinite(grid)
    finite = grid[~empty]
    lo = vmin if vmin is not None else (float(finite.min()) if finite.size else 0.0)
    hi = vmax if vmax is not None else (float(finite.max()) if finite.size else 1.0)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((np.where(empty, lo, grid) - lo) / span, 0.0, 1.0)

    rgba = matplotlib.colormaps[cmap](scaled)
    rgb = (rgba[..., :3] * 255).round().astype(np.uint8)
    rgb[empty] = EMPTY_COLOR
    img = Image.fromarray(rgb)
    scale = max(1, side // max(grid.shape))
    return img.resize((grid.shape[1] * scale, grid.shape[0] * scale), Image.Resampling.NEAREST)


def write_heatmap_png(grid: np.ndarray, path, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    heatmap_image(grid, **kwargs).save(path, format="PNG", optimize=True)
    logging.debug(f"[Plots] Heatmap written: {path}")
    return path


# ---------- line charts ----------

def write_metric_chart(metrics: Sequence[dict], key: str, path, retrain_generations: Sequence[int] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [row["generation"] for row in metrics]
    ys = [row[key] for row in metrics]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(xs, ys, linewidth=1.2)
    for g in retrain_generations:
        ax.axvline(g, color="grey", linewidth=0.5, alpha=0.5)
    ax.set_xlabel("generation")
    ax.set_ylabel(key.replace("_", " "))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_metric_charts(metrics: Sequence[dict], out_dir, retrain_generations: Sequence[int] = ()) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    charts = {}
    if not metrics:
        return charts
    for key in CHART_METRICS:
        charts[key] = write_metric_chart(metrics, key, out_dir / f"{key}.png", retrain_generations)
    return charts


# ---------- run bundle ----------

def write_run_plots(run_dir, metrics: List[dict], archive) -> Dict[str, str]:
    """Writes plots/ under the run directory; returns name -> path relative to run_dir."""
    run_dir = Path(run_dir)
    plots_dir = run_dir / "plots"
    retrains = [row["generation"] for row in metrics if row.get("retrained")]
    out = {"fitness_grid": write_heatmap_png(archive.fitness_grid(), plots_dir / "fitness_grid.png", vmin=0.0, vmax=1.0)}
    out.update(write_metric_charts(metrics, plots_dir, retrains))
    logging.info(f"[Plots] {len(out)} images written to {plots_dir}")
    return {name: p.relative_to(run_dir).as_posix() for name, p in out.items()}
