"""Static SVG scatter plots of embeddings and bar charts of importances.

Output bytes depend only on the inputs: the SVG id salt and the date
metadata are pinned.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .cluster import NOISE  # noqa: E402
from .errors import DataError  # noqa: E402

NOISE_COLOR = "#9a9a9a"
_SVG_RC = {"svg.hashsalt": "shapclust", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _is_categorical(colors) -> bool:
    arr = np.asarray(colors)
    if arr.dtype.kind in "OUSb":
        return True
    if arr.dtype.kind in "iu":
        return True
    return bool(np.all(arr == np.round(arr))) and np.unique(arr).size <= 20


def plot_embedding(
    coords,
    colors,
    path,
    title: str = "",
    continuous: bool | None = None,
    color_label: str = "",
    legend_names: dict | None = None,
) -> Path:
    """Scatter of 2-D coordinates, colored by labels or by a continuous value.

    Integer labels get a categorical palette with noise (-1) drawn in gray
    and one legend entry per label. Continuous values get a colorbar.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] == 0:
        raise DataError("cannot plot an empty embedding")
    if coords.shape[1] < 2:
        coords = np.column_stack([coords[:, 0], np.zeros(coords.shape[0])])
    colors = np.asarray(colors)
    if colors.shape[0] != coords.shape[0]:
        raise DataError(
            f"{colors.shape[0]} colors for {coords.shape[0]} points"
        )
    if continuous is None:
        continuous = not _is_categorical(colors)

    fig, ax = plt.subplots(figsize=(6, 5))
    size = max(2.0, min(20.0, 4000.0 / coords.shape[0]))
    if continuous:
        sc = ax.scatter(coords[:, 0], coords[:, 1], c=colors.astype(float), s=size,
                        cmap="viridis", linewidths=0)
        fig.colorbar(sc, ax=ax, label=color_label)
    else:
        keys = sorted(set(colors.tolist()), key=lambda v: (str(v) != str(NOISE), str(v)))
        cmap = plt.get_cmap("tab20")
        k = 0
        for key in keys:
            mask = colors == key
            is_noise = str(key) == str(NOISE)
            color = NOISE_COLOR if is_noise else cmap(k % 20)
            if not is_noise:
                k += 1
            name = (legend_names or {}).get(key, "noise" if is_noise else str(key))
            ax.scatter(coords[mask, 0], coords[mask, 1], s=size, color=color,
                       linewidths=0, label=name)
        ax.legend(markerscale=max(1.0, 20.0 / size), fontsize="small", loc="best")
    ax.set_xlabel("UMAP 1")
    ax.set_ylabel("UMAP 2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_importance(ranked: Sequence[tuple[str, float]], path, top_k: int = 10, title: str = ""):
    """Horizontal bars of mean |phi|, most important on top."""
    if not ranked:
        raise DataError("nothing to plot")
    top = list(ranked)[:top_k][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(top) + 1.2))
    ax.barh([n for n, _ in top], [v for _, v in top], color="#3b75af")
    ax.set_xlabel("mean |Shapley value|")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
