#!/usr/bin/env python3
"""Render figures from balancenet pipeline artifacts.

Reads only the pipeline's documented file formats (correlation CSV, cluster
order CSV, sweep CSV, landscape CSV, fits/report JSON) and writes one image
per invocation. No statistics are recomputed here: Gaussian overlays come from
fits.json and clustermaps apply the emitted permutation as-is.

Usage:
    python3 plots/render.py --kind corr_pdf --in win_0/corr.csv fits.json --out pdf.png
    python3 plots/render.py --kind clustermap --in corr.csv cluster_order.csv --out map.png
    python3 plots/render.py --kind sweep_curves --in sweep.csv [...] --out curves.png
    python3 plots/render.py --kind landscape --in landscape.csv --out land.png [--cap 300]
    python3 plots/render.py --kind tc_timeline --in report.json --out tc.png
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("corr_pdf", "clustermap", "sweep_curves", "landscape", "tc_timeline")

DEFAULT_CAP = 300

SWEEP_COLUMNS = (
    "T",
    "q_norm_mean",
    "q_norm_std",
    "q_raw_mean",
    "energy_norm_mean",
    "energy_norm_std",
    "link_mean",
    "acceptance_rate",
    "replicas",
)


class RenderError(Exception):
    """Names the offending file so the CLI can report it."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise RenderError(path, str(exc)) from None


def load_corr(path: str) -> tuple[list[str], np.ndarray]:
    rows = _read_rows(path)
    if not rows or rows[0][0] != "":
        raise RenderError(path, "expected a ticker header row starting with an empty cell")
    tickers = rows[0][1:]
    n = len(tickers)
    if len(rows) != n + 1:
        raise RenderError(path, f"expected {n} data rows, found {len(rows) - 1}")
    values = np.empty((n, n))
    for i, row in enumerate(rows[1:]):
        if len(row) != n + 1:
            raise RenderError(path, f"row {i + 2} has {len(row)} cells, expected {n + 1}")
        try:
            values[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise RenderError(path, f"row {i + 2}: {exc}") from None
    return tickers, values


def load_cluster_order(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            line = fh.readline().strip()
    except OSError as exc:
        raise RenderError(path, str(exc)) from None
    if not line:
        raise RenderError(path, "empty cluster order")
    return line.split(",")


def load_sweep(path: str) -> dict[str, np.ndarray]:
    rows = _read_rows(path)
    if not rows or tuple(rows[0]) != SWEEP_COLUMNS:
        raise RenderError(path, f"expected header {','.join(SWEEP_COLUMNS)}")
    table: dict[str, list[float]] = {c: [] for c in SWEEP_COLUMNS}
    for k, row in enumerate(rows[1:]):
        if len(row) != len(SWEEP_COLUMNS):
            raise RenderError(path, f"row {k + 2} has {len(row)} cells")
        for c, cell in zip(SWEEP_COLUMNS, row):
            try:
                table[c].append(float(cell))
            except ValueError as exc:
                raise RenderError(path, f"row {k + 2}: {exc}") from None
    return {c: np.asarray(v) for c, v in table.items()}


def load_landscape(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = _read_rows(path)
    if not rows or rows[0] != ["bin_x_low", "bin_y_low", "count"]:
        raise RenderError(path, "expected header bin_x_low,bin_y_low,count")
    try:
        parsed = [(float(r[0]), float(r[1]), int(r[2])) for r in rows[1:]]
    except (ValueError, IndexError) as exc:
        raise RenderError(path, f"bad landscape row: {exc}") from None
    xs = sorted({p[0] for p in parsed})
    ys = sorted({p[1] for p in parsed})
    if len(xs) < 2 or len(ys) < 2:
        raise RenderError(path, "landscape grid needs at least 2 bins per axis")
    edges_x = np.array(xs + [xs[-1] + (xs[1] - xs[0])])
    edges_y = np.array(ys + [ys[-1] + (ys[1] - ys[0])])
    ix = {v: k for k, v in enumerate(xs)}
    iy = {v: k for k, v in enumerate(ys)}
    counts = np.zeros((len(xs), len(ys)))
    for x, y, c in parsed:
        counts[ix[x], iy[y]] = c
    return edges_x, edges_y, counts


def load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise RenderError(path, str(exc)) from None
    except json.JSONDecodeError as exc:
        raise RenderError(path, f"bad JSON: {exc}") from None


def _window_label(path: str) -> str:
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return parent if parent.startswith("win_") else os.path.basename(path)


def _split_inputs(paths: list[str]) -> tuple[list[str], list[str]]:
    csvs = [p for p in paths if not p.endswith(".json")]
    jsons = [p for p in paths if p.endswith(".json")]
    return csvs, jsons


def render_corr_pdf(inputs: list[str], out: str):
    """Histogram of off-diagonal correlations, Gaussian overlay from fits.json."""
    corr_paths, fit_paths = _split_inputs(inputs)
    if not corr_paths:
        raise RenderError(inputs[0] if inputs else "<none>", "no correlation CSV given")
    fits_by_window: dict[str, dict] = {}
    for fp in fit_paths:
        payload = load_json(fp)
        if "windows" not in payload:
            raise RenderError(fp, "missing 'windows' list")
        for win in payload["windows"]:
            fits_by_window[win["window_id"]] = win["gaussian_fit"]
    fig, ax = plt.subplots(figsize=(7, 5))
    grid = np.linspace(-1, 1, 400)
    for path in corr_paths:
        _, values = load_corr(path)
        n = values.shape[0]
        off = values[np.triu_indices(n, k=1)]
        label = _window_label(path)
        ax.hist(off, bins=40, range=(-1, 1), density=True, alpha=0.45, label=label)
        fit = fits_by_window.get(label)
        if fit and fit.get("std", 0) > 0:
            mu, sigma = fit["mean"], fit["std"]
            pdf = np.exp(-0.5 * ((grid - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            ax.plot(grid, pdf, lw=1.8)
    ax.set_xlabel("correlation element")
    ax.set_ylabel("density")
    ax.set_xlim(-1, 1)
    ax.legend(fontsize=8)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return fig


def render_clustermap(inputs: list[str], out: str):
    """Correlation heatmap in the emitted dendrogram order (no re-clustering)."""
    if len(inputs) != 2:
        raise RenderError(inputs[0] if inputs else "<none>",
                          "clustermap needs exactly corr.csv and cluster_order.csv")
    corr_path = next((p for p in inputs if p.endswith("corr.csv")), inputs[0])
    order_path = next((p for p in inputs if p != corr_path), inputs[-1])
    tickers, values = load_corr(corr_path)
    ordered = load_cluster_order(order_path)
    if sorted(ordered) != sorted(tickers):
        raise RenderError(order_path, "cluster order tickers do not match the matrix")
    index = {t: k for k, t in enumerate(tickers)}
    perm = [index[t] for t in ordered]
    permuted = values[np.ix_(perm, perm)]
    fig, ax = plt.subplots(figsize=(6.5, 6))
    im = ax.imshow(permuted, vmin=-1, vmax=1, cmap="RdBu_r", interpolation="nearest")
    ax.set_xticks(range(len(ordered)))
    ax.set_yticks(range(len(ordered)))
    ax.set_xticklabels(ordered, rotation=90, fontsize=6)
    ax.set_yticklabels(ordered, fontsize=6)
    fig.colorbar(im, ax=ax, label="correlation")
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return fig


def render_sweep_curves(inputs: list[str], out: str):
    """Order parameter and normalized energy versus temperature."""
    if not inputs:
        raise RenderError("<none>", "sweep_curves needs at least one sweep.csv")
    fig, (ax_q, ax_e) = plt.subplots(2, 1, figsize=(7, 8), sharex=True)
    for path in inputs:
        table = load_sweep(path)
        label = _window_label(path)
        t = table["T"]
        ax_q.errorbar(t, table["q_norm_mean"], yerr=table["q_norm_std"],
                      marker="o", ms=3, lw=1, capsize=2, label=label)
        ax_e.errorbar(t, table["energy_norm_mean"], yerr=table["energy_norm_std"],
                      marker="s", ms=3, lw=1, capsize=2, label=label)
    ax_q.set_ylabel("Q (normalized two-star)")
    ax_q.axhline(0.0, color="gray", lw=0.5)
    ax_e.set_ylabel("E / sum(J)")
    ax_e.axhline(0.0, color="gray", lw=0.5)
    ax_e.set_xlabel("temperature")
    ax_q.set_xscale("log")
    ax_q.legend(fontsize=8)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return fig


def render_landscape(inputs: list[str], out: str, cap: int = DEFAULT_CAP):
    """Triangle energy-energy histogram; counts above cap saturate to red."""
    if len(inputs) != 1:
        raise RenderError(inputs[0] if inputs else "<none>",
                          "landscape needs exactly one landscape.csv")
    edges_x, edges_y, counts = load_landscape(inputs[0])
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_over("red")
    mesh = ax.pcolormesh(edges_x, edges_y, counts.T, cmap=cmap, vmin=0, vmax=cap)
    fig.colorbar(mesh, ax=ax, extend="max", label="triangle pairs")
    ax.set_xlabel("E_u")
    ax.set_ylabel("E_v")
    ax.set_aspect("equal")
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return fig


def render_tc_timeline(inputs: list[str], out: str):
    """Critical temperature per window, dynamics and mean-field estimates."""
    if len(inputs) != 1:
        raise RenderError(inputs[0] if inputs else "<none>",
                          "tc_timeline needs exactly one report.json")
    payload = load_json(inputs[0])
    windows = payload.get("windows")
    if windows is None:
        raise RenderError(inputs[0], "missing 'windows' list")
    labels = [w.get("start_date") or w.get("window_id", "?") for w in windows]
    tc = [w.get("t_c") for w in windows]
    tc_mf = [w.get("t_c_mf") for w in windows]
    x = np.arange(len(windows))
    fig, ax = plt.subplots(figsize=(max(7, 0.35 * len(windows)), 4.5))
    have = [k for k in x if tc[k] is not None]
    ax.plot([x[k] for k in have], [tc[k] for k in have], "o-", ms=4, label="T_c (dynamics)")
    have_mf = [k for k in x if tc_mf[k] is not None]
    if have_mf:
        ax.plot([x[k] for k in have_mf], [tc_mf[k] for k in have_mf], "d--", ms=4,
                mfc="none", label="T_c (mean-field)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, fontsize=7, ha="right")
    ax.set_ylabel("critical temperature")
    ax.legend(fontsize=8)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return fig


def render(kind: str, inputs: list[str], out: str, cap: int = DEFAULT_CAP):
    if kind == "corr_pdf":
        return render_corr_pdf(inputs, out)
    if kind == "clustermap":
        return render_clustermap(inputs, out)
    if kind == "sweep_curves":
        return render_sweep_curves(inputs, out)
    if kind == "landscape":
        return render_landscape(inputs, out, cap=cap)
    if kind == "tc_timeline":
        return render_tc_timeline(inputs, out)
    raise ValueError(f"unknown kind {kind!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render.py", description="Render balancenet artifacts to figures."
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input artifact paths (CSV/JSON)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--cap", type=int, default=DEFAULT_CAP,
                        help="landscape saturation count (counts above show red)")
    args = parser.parse_args(argv)
    try:
        fig = render(args.kind, args.inputs, args.out, cap=args.cap)
        plt.close(fig)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
