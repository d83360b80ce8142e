"""Figures rendered from a run's delimited outputs.

Every renderer reads the CSVs the commands wrote and drops a PNG next to
them; the CSVs stay the normative record and the figures are derived,
so plots can always be regenerated after the fact.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _columns(path: Path) -> dict[str, list[str]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        cols: dict[str, list[str]] = {k: [] for k in reader.fieldnames or ()}
        for row in reader:
            for k, v in row.items():
                cols[k].append(v)
    return cols


def _floats(vals: list[str]) -> np.ndarray:
    return np.array([float(v) if v else np.nan for v in vals])


def render_samples(samples_csv: Path, out_png: Path,
                   verdicts_csv: Path | None = None) -> Path:
    """Scatter of a sample cloud; verdicts, when present, color the split."""
    cols = _columns(samples_csv)
    x, y = _floats(cols["x"]), _floats(cols["y"])
    fig, ax = plt.subplots(figsize=(5, 5))
    if verdicts_csv is not None and Path(verdicts_csv).exists():
        acc = np.array([v == "1" for v in _columns(verdicts_csv)["accept"]])
        ax.scatter(x[~acc], y[~acc], s=4, c="lightgray", label="rejected")
        ax.scatter(x[acc], y[acc], s=4, c="tab:green", label="accepted")
        ax.legend(loc="upper right", fontsize=8)
    else:
        ax.scatter(x, y, s=4, c="tab:blue")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(out_png)


def render_histogram(hist_csv: Path, out_png: Path) -> Path:
    """Lift-margin histogram split by ground-truth membership."""
    cols = _columns(hist_csv)
    lo = _floats(cols["bin_lo"])
    width = _floats(cols["bin_hi"]) - lo
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(lo, _floats(cols["member"]), width=width, align="edge",
           alpha=0.6, label="member")
    ax.bar(lo, _floats(cols["non_member"]), width=width, align="edge",
           alpha=0.6, label="non-member")
    ax.axvline(0.0, color="k", lw=1)
    ax.set_xlabel("lift margin")
    ax.set_ylabel("samples")
    ax.legend()
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(out_png)


def render_ablation(abl_csv: Path, out_png: Path) -> Path:
    """Accuracy vs trial count, one line per strategy."""
    cols = _columns(abl_csv)
    strategies = sorted(set(cols["strategy"]))
    trials = _floats(cols["trials"])
    acc = _floats(cols["accuracy"])
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in strategies:
        rows = [i for i, v in enumerate(cols["strategy"]) if v == s]
        order = sorted(rows, key=lambda i: trials[i])
        ax.plot(trials[order], acc[order], marker="o", label=s)
    ax.set_xscale("log")
    ax.set_xlabel("trials")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(out_png)


def render_runtime(results_csv: Path, out_png: Path) -> Path:
    """Mean wall-clock per method across scenarios."""
    cols = _columns(results_csv)
    methods = list(dict.fromkeys(cols["method"]))
    wall = _floats(cols["wall_ms"])
    means = [np.nanmean([wall[i] for i, m in enumerate(cols["method"])
                         if m == name]) for name in methods]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(methods, means, color="tab:purple")
    ax.set_ylabel("wall time (ms)")
    ax.tick_params(axis="x", rotation=45)
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(out_png)


def render_heatmap(heatmap_csv: Path, out_png: Path) -> Path:
    """Per-pixel lift grid; positive cells are the activated pixels."""
    grid = np.loadtxt(heatmap_csv, delimiter=",", ndmin=2)
    fig, ax = plt.subplots(figsize=(5, 4))
    lim = max(abs(float(grid.min())), abs(float(grid.max())), 1e-12)
    im = ax.imshow(grid, cmap="RdBu_r", vmin=-lim, vmax=lim)
    fig.colorbar(im, ax=ax, label="per-pixel lift")
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(out_png)


def render_all(directory: str | Path) -> list[Path]:
    """Render every recognized CSV in a run directory to PNG."""
    directory = Path(directory)
    written: list[Path] = []
    samples = directory / "samples.csv"
    if samples.exists():
        verdicts = directory / "verdicts.csv"
        written.append(render_samples(
            samples, directory / "samples.png",
            verdicts if verdicts.exists() else None))
    filtered = directory / "filtered.csv"
    if filtered.exists():
        written.append(render_samples(filtered, directory / "filtered.png"))
    for hist in sorted(directory.glob("histogram*.csv")):
        written.append(render_histogram(hist, hist.with_suffix(".png")))
    ablation = directory / "ablation.csv"
    if ablation.exists():
        written.append(render_ablation(ablation, directory / "ablation.png"))
    results = directory / "results.csv"
    if results.exists():
        written.append(render_runtime(results, directory / "runtime.png"))
    for heat in sorted(directory.glob("heatmap_*.csv")):
        written.append(render_heatmap(heat, heat.with_suffix(".png")))
    return written
