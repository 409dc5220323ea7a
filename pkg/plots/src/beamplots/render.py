"""Renderers mapping known simcli CSV files to figures.

Each renderer reads one CSV, draws one image, and returns the list of
legend labels it used, one per plotted series. Labels always carry the
source column name so a figure can be traced back to the data file.
Analysis stays upstream: these functions never derive outage or capacity
numbers, they only restyle what the CSV already holds.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import colors


class MissingColumnError(Exception):
    """A renderer asked for columns the CSV header does not carry."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        names = ", ".join(self.columns)
        super().__init__(f"{self.path.name}: missing column(s): {names}")


def read_table(path: Path) -> tuple[list[str], list[dict]]:
    """Parse a CSV into (header, rows-as-string-dicts)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        rows = list(reader)
    return header, rows


def require(path: Path, header: list[str], needed) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise MissingColumnError(path, missing)


def _save(fig, out_path: Path) -> None:
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_op_curves(csv_path: Path, out_path: Path) -> list[str]:
    """Outage against the SNR target: analytic curve, simulated markers.

    One pair of series per distinct (position, stage) group, in the row
    order of the file.
    """
    header, rows = read_table(csv_path)
    require(csv_path, header, ("pos_x", "pos_y", "stage", "gamma", "op_approx", "op_mc"))
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["pos_x"], row["pos_y"], row["stage"]), []).append(row)

    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    labels = []
    for (px, py, stage), grp in groups.items():
        gamma = [float(r["gamma"]) for r in grp]
        where = f"({px},{py}) {stage}"
        for column, style in (("op_approx", "-"), ("op_mc", "o")):
            label = f"{column} {where}"
            vals = [float(r[column]) for r in grp]
            if style == "-":
                ax.plot(gamma, vals, style, lw=1.2, label=label)
            else:
                ax.plot(gamma, vals, style, ms=4, mfc="none", ls="none", label=label)
            labels.append(label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("gamma")
    ax.set_ylabel("outage probability")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    _save(fig, out_path)
    return labels


def render_op_heatmap(csv_path: Path, out_path: Path) -> list[str]:
    """Outage over the position grid, one panel per array size.

    The marker sits on the row with the smallest op value in the file;
    no value is recomputed.
    """
    header, rows = read_table(csv_path)
    require(csv_path, header, ("n_tx", "x", "y", "op"))
    if not rows:
        raise ValueError(f"{csv_path.name}: no data rows")
    panels: dict[str, list[dict]] = {}
    for row in rows:
        panels.setdefault(row["n_tx"], []).append(row)

    fig, axes = plt.subplots(1, len(panels), figsize=(5.4 * len(panels), 4.4),
                             squeeze=False)
    labels = []
    for ax, (ntx, grp) in zip(axes[0], panels.items()):
        xs = sorted({float(r["x"]) for r in grp})
        ys = sorted({float(r["y"]) for r in grp})
        xi = {v: i for i, v in enumerate(xs)}
        yi = {v: i for i, v in enumerate(ys)}
        grid = np.full((len(ys), len(xs)), np.nan)
        for r in grp:
            grid[yi[float(r["y"])], xi[float(r["x"])]] = float(r["op"])
        # log color scale needs positive data; masked cells render blank
        masked = np.ma.masked_invalid(np.ma.masked_less_equal(grid, 0.0))
        norm = colors.LogNorm() if masked.count() else None
        mesh = ax.pcolormesh(xs, ys, masked, norm=norm, shading="nearest")
        fig.colorbar(mesh, ax=ax, label="op")
        best = min(grp, key=lambda r: float(r["op"]))
        ax.plot(float(best["x"]), float(best["y"]), "r*", ms=12)
        label = f"op (n_tx={ntx})"
        ax.set_title(label)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        labels.append(label)
    _save(fig, out_path)
    return labels


def render_convergence(csv_path: Path, out_path: Path) -> list[str]:
    """Objective trace per solver, iteration on the x axis."""
    header, rows = read_table(csv_path)
    require(csv_path, header, ("solver", "iteration", "objective"))
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["solver"], []).append(row)

    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    labels = []
    for solver, grp in groups.items():
        label = f"objective ({solver})"
        ax.plot([float(r["iteration"]) for r in grp],
                [float(r["objective"]) for r in grp],
                marker=".", lw=1.2, label=label)
        labels.append(label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, out_path)
    return labels


def render_sweep_curves(csv_path: Path, out_path: Path) -> list[str]:
    """Capacity against the sensing ratio w; one series per value column.

    Legend entries are the column names themselves.
    """
    header, rows = read_table(csv_path)
    require(csv_path, header, ("w",))
    value_cols = [c for c in header if c != "w"]
    if not value_cols:
        raise MissingColumnError(csv_path, ("capacity_*",))

    w = [float(r["w"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    for column in value_cols:
        ax.plot(w, [float(r[column]) for r in rows], marker=".", lw=1.2,
                label=column)
    ax.set_xlabel("w")
    ax.set_ylabel("capacity (bps/Hz)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, out_path)
    return list(value_cols)


def render_trajectory(csv_path: Path, out_path: Path) -> list[str]:
    """Planned-position paths overlaid per policy, plus the true path.

    Only the first run in the file is drawn; the truth series comes from
    the first policy's rows (the truth columns repeat across policies).
    """
    header, rows = read_table(csv_path)
    require(csv_path, header, ("run", "policy", "true_x", "true_y",
                               "pred_x", "pred_y"))
    if not rows:
        raise ValueError(f"{csv_path.name}: no data rows")
    first_run = rows[0]["run"]
    rows = [r for r in rows if r["run"] == first_run]
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["policy"], []).append(row)

    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    truth = next(iter(groups.values()))
    labels = ["true_x/true_y"]
    ax.plot([float(r["true_x"]) for r in truth],
            [float(r["true_y"]) for r in truth],
            "k-", lw=1.6, label=labels[0])
    for policy, grp in groups.items():
        label = f"pred_x/pred_y ({policy})"
        ax.plot([float(r["pred_x"]) for r in grp],
                [float(r["pred_y"]) for r in grp],
                lw=1.0, alpha=0.85, label=label)
        labels.append(label)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, out_path)
    return labels


def render_capacity_time(csv_path: Path, out_path: Path) -> list[str]:
    """Per-slot capacity traces; one series per non-index column."""
    header, rows = read_table(csv_path)
    require(csv_path, header, ("slot", "time_s"))
    value_cols = [c for c in header if c not in ("slot", "time_s")]
    if not value_cols:
        raise MissingColumnError(csv_path, ("*_capacity_mean",))

    t = [float(r["time_s"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7.2, 4.6))
    for column in value_cols:
        thin = column.endswith("_run0")
        ax.plot(t, [float(r[column]) for r in rows],
                lw=0.7 if thin else 1.4, alpha=0.5 if thin else 1.0,
                label=column)
    ax.set_xlabel("time_s")
    ax.set_ylabel("capacity (bps/Hz)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, out_path)
    return list(value_cols)


# csv filename -> (renderer, image filename)
FIGURES = (
    ("op_accuracy.csv", render_op_curves, "op_accuracy.png"),
    ("op_map.csv", render_op_heatmap, "op_map.png"),
    ("convergence.csv", render_convergence, "convergence.png"),
    ("sweep_w.csv", render_sweep_curves, "sweep_w.png"),
    ("slots.csv", render_trajectory, "trajectory.png"),
    ("perslot.csv", render_capacity_time, "perslot.png"),
)


def plot_all(out_dir: Path) -> dict[str, tuple[str, ...]]:
    """Render every known CSV found under out_dir.

    Returns {image filename: legend labels}. Raises FileNotFoundError if
    the directory holds none of the known files, and MissingColumnError
    if a present file lacks a column its renderer needs.
    """
    out_dir = Path(out_dir)
    rendered: dict[str, tuple[str, ...]] = {}
    for csv_name, renderer, image_name in FIGURES:
        src = out_dir / csv_name
        if not src.exists():
            continue
        rendered[image_name] = tuple(renderer(src, out_dir / image_name))
    if not rendered:
        known = ", ".join(name for name, _, _ in FIGURES)
        raise FileNotFoundError(f"{out_dir}: no known CSV files (expected any of {known})")
    return rendered
