"""PNG figures for the CSV series written by the command-line front-end."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VERDICT_CODES = {"HOLDS": 0, "INCONCLUSIVE": 1, "HYPOTHESIS_UNMET": 2, "VIOLATED": 3, "ERROR": 4}


def size(scale: float = 1.0) -> list[float]:
    width = 6.4 * scale
    return [width, width * (math.sqrt(5.0) - 1.0) / 2.0]


mpl.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": size(1.0),
    "savefig.dpi": 120,
})


def _numeric_columns(columns, rows):
    out = {}
    for j, name in enumerate(columns):
        try:
            vals = np.array([float(r[j]) if r[j] is not None else math.nan for r in rows])
        except (TypeError, ValueError):
            continue
        if np.any(np.isfinite(vals)):
            out[name] = vals
    return out


def plot_series(columns, rows, title: str, path: Path) -> bool:
    """Every numeric column against the first one; ``False`` if there is nothing to draw."""
    cols = _numeric_columns(columns, rows)
    x_name = columns[0]
    if x_name not in cols or len(cols) < 2:
        return False
    x = cols.pop(x_name)
    fig, ax = plt.subplots()
    for name, y in cols.items():
        ax.plot(x, y, marker="o", ms=3, lw=1, label=name)
    if np.all(x > 0) and x.max() / x.min() > 50:
        ax.set_xscale("log")
    ax.set_xlabel(x_name)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return True


def plot_sweep(columns, rows, n_axes: int, title: str, path: Path) -> bool:
    """Gap (or first value column) along one axis, or a verdict map over two."""
    if n_axes == 1:
        keep = [c for c in columns if c not in ("verdict", "error")]
        idx = [columns.index(c) for c in keep]
        return plot_series(keep, [[r[i] for i in idx] for r in rows], title, path)
    vi = columns.index("verdict")
    xs = sorted({r[0] for r in rows})
    ys = sorted({r[1] for r in rows})
    grid = np.full((len(ys), len(xs)), np.nan)
    for r in rows:
        grid[ys.index(r[1]), xs.index(r[0])] = VERDICT_CODES.get(r[vi], np.nan)
    fig, ax = plt.subplots()
    cmap = mpl.colors.ListedColormap(["#4c9a2a", "#c9c9c9", "#e0a030", "#c0392b", "#000000"])
    ax.pcolormesh(_edges(xs), _edges(ys), grid, cmap=cmap, vmin=-0.5, vmax=4.5, shading="flat")
    handles = [mpl.patches.Patch(color=cmap(k), label=v) for v, k in VERDICT_CODES.items()]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    ax.set_xlabel(columns[0])
    ax.set_ylabel(columns[1])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return True


def _edges(v):
    v = np.asarray(v, float)
    if v.size == 1:
        return np.array([v[0] - 0.5, v[0] + 0.5])
    mid = 0.5 * (v[1:] + v[:-1])
    return np.concatenate([[2 * v[0] - mid[0]], mid, [2 * v[-1] - mid[-1]]])


def plot_outputs(directory: Path, series: dict, job: dict) -> list[str]:
    written = []
    for name, (columns, rows) in series.items():
        if not rows:
            continue
        path = Path(directory) / f"{name}.png"
        title = job.get("target", job["command"]) if name == "sweep" else name.replace("_", " ")
        if name == "sweep":
            ok = plot_sweep(columns, rows, len(job["grid"]["axes"]), title, path)
        else:
            ok = plot_series(columns, rows, title, path)
        if ok:
            written.append(path.name)
    return written
