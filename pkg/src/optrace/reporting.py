"""Delimited output and static figures for experiment runs.

Every run directory receives the exact configuration used, the package
version, and the seed; CSV files are RFC-4180 with mandatory headers and
repeat byte-for-byte under identical configuration. Figures are rendered
by matplotlib straight to self-contained SVG files next to the CSVs.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "optrace",
    "figure.figsize": (4.8, 3.4),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.3,
    "legend.frameon": False,
})


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, check=False,
        )
        tag = desc.stdout.strip()
    except OSError:
        tag = ""
    from . import __version__

    return f"optrace {__version__}" + (f" ({tag})" if tag else "")


def _format_cell(c):
    if isinstance(c, (np.floating, float)):
        return repr(float(c))
    if isinstance(c, (np.integer, int)):
        return int(c)
    return c


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(c) for c in row])
    return path


def write_run_metadata(outdir: Path, config: dict, seed: int) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {"version": version_string(), "seed": seed, "config": config}
    path = outdir / "run_config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    return path


def save_figure(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def loglog_figure(series: dict, xlabel: str, ylabel: str, title: str = ""):
    """One log-log panel; ``series`` maps label -> (x, y)."""
    fig, ax = plt.subplots()
    for label, (x, y) in series.items():
        ax.loglog(x, y, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return fig


def semilogy_figure(series: dict, xlabel: str, ylabel: str, title: str = ""):
    fig, ax = plt.subplots()
    for label, (x, y) in series.items():
        ax.semilogy(x, y, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return fig


def line_figure(series: dict, xlabel: str, ylabel: str, title: str = ""):
    fig, ax = plt.subplots()
    for label, (x, y) in series.items():
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return fig


def heatmap_figure(values: np.ndarray, extent, title: str = ""):
    fig, ax = plt.subplots()
    im = ax.imshow(np.asarray(values).T, origin="lower", extent=extent,
                   aspect="equal", cmap="magma")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return fig


def write_field_snapshot(path: Path, values, grid_extent) -> Path:
    """Plain-text matrix of |E_z|^2 values.

    Row i is the i-th x node, column j the j-th y node; the header
    records the extent so the matrix can be replotted without the run
    configuration.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        "field intensity |E_z|^2 on a uniform grid\n"
        f"extent: x in [{grid_extent[0]}, {grid_extent[1]}], "
        f"y in [{grid_extent[2]}, {grid_extent[3]}]\n"
        "rows: x nodes (ascending); columns: y nodes (ascending)"
    )
    np.savetxt(path, np.asarray(values), header=header)
    return path
