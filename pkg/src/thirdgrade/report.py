"""CSV output, companion plotting scripts and optional PNG rendering.

CSV files always start with a header row; floats are written with 17
significant digits so files round-trip exactly and compare bitwise across
runs.  Each CSV gets a small matplotlib script next to it that reproduces
the figure; ``render_figures`` runs the same plotting code in-process with the
non-interactive Agg backend.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["write_csv", "read_csv", "write_plot_script", "render_figure", "HISTORY_COLUMNS"]

HISTORY_COLUMNS = ("iter", "J", "stderr", "grad_norm", "residual", "step", "wall_time")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, columns: dict) -> None:
    """Write equal-length 1-D series in the given column order."""
    names = list(columns)
    cols = [np.asarray(columns[n]).reshape(-1) if np.ndim(columns[n]) else np.asarray([columns[n]])
            for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns must have equal length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names, body = rows[0], rows[1:]
    return {n: np.array([float(r[j]) for r in body]) for j, n in enumerate(names)}


_SCRIPT = '''"""Plot {csv_name}; run with: python {script_name} [output.png]"""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open("{csv_name}", newline="") as fh:
    rows = list(csv.reader(fh))
names, body = rows[0], rows[1:]
cols = {{n: [float(r[j]) for r in body] for j, n in enumerate(names)}}
x = cols.pop("{xcol}")
fig, axes = plt.subplots(len(cols), 1, figsize=(6, 1.8 * len(cols)), sharex=True, squeeze=False)
for ax, (name, ys) in zip(axes[:, 0], cols.items()):
    ax.plot(x, ys)
    if {logy} and all(y > 0 for y in ys):
        ax.set_yscale("log")
    ax.set_ylabel(name, fontsize=8)
axes[-1, 0].set_xlabel("{xcol}")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{png_name}", dpi=100)
'''


def write_plot_script(csv_path, xcol: str, logy: bool = True) -> Path:
    csv_path = Path(csv_path)
    script = csv_path.with_name(f"plot_{csv_path.stem}.py")
    script.write_text(_SCRIPT.format(csv_name=csv_path.name, script_name=script.name, xcol=xcol,
                                     logy=logy, png_name=csv_path.stem + ".png"))
    return script


def render_figure(csv_path, xcol: str, png_path=None, logy: bool = True) -> Path:
    """Render the companion figure for a CSV to PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    png_path = Path(png_path) if png_path else csv_path.with_suffix(".png")
    cols = read_csv(csv_path)
    x = cols.pop(xcol)
    fig, axes = plt.subplots(len(cols), 1, figsize=(6, 1.8 * len(cols)), sharex=True, squeeze=False)
    for ax, (name, ys) in zip(axes[:, 0], cols.items()):
        ax.plot(x, ys)
        if logy and np.all(ys > 0):
            ax.set_yscale("log")
        ax.set_ylabel(name, fontsize=8)
    axes[-1, 0].set_xlabel(xcol)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return png_path
