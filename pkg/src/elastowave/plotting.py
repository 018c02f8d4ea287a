"""Static figures from snapshot files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import read_snapshot


def snapshot_view(field: np.ndarray, component: int = 0, axis: int | None = None,
                  index: int | None = None) -> np.ndarray:
    """1D line or 2D slice of one component of a ``(ncomp, *dims)`` field.

    Singleton axes are squeezed first; a remaining 3D block is cut through its
    middle (or ``index``) normal to ``axis`` (default the first axis).
    """
    u = np.squeeze(field[component])
    if u.ndim <= 2:
        return np.atleast_1d(u)
    axis = 0 if axis is None else axis
    index = u.shape[axis] // 2 if index is None else index
    return np.take(u, index, axis=axis)


def plot_snapshot(path, out, component: int = 0, axis: int | None = None, index: int | None = None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    field, meta = read_snapshot(path)
    view = snapshot_view(field, component, axis, index)
    fig, ax = plt.subplots(figsize=(7, 4 if view.ndim == 1 else 6))
    if view.ndim == 1:
        L = max(meta["lengths"])
        x = L * (0.5 + np.arange(view.size)) / view.size
        ax.plot(x, view, lw=1)
        ax.set_xlabel("x [m]")
        ax.set_ylabel(f"{meta['field']}{component + 1}")
    else:
        lim = float(np.abs(view).max()) or 1.0
        im = ax.imshow(view.T, origin="lower", cmap="RdBu_r", vmin=-lim, vmax=lim)
        fig.colorbar(im, ax=ax, label=f"{meta['field']}{component + 1}")
    ax.set_title(f"t = {meta['time']:.4e} s (step {meta['step']})")
    fig.tight_layout()
    fig.savefig(Path(out), dpi=120)
    plt.close(fig)
    return Path(out)
