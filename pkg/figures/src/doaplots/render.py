"""Deterministic figure rendering.

Output bytes are a pure function of the CSV contents and the PlotSpec:
fixed figure geometry, fixed fonts (glyphs stored as paths), a pinned SVG
hash salt, and no embedded timestamps. Both a PNG and an SVG are written
for every request, to the same stem.
"""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .plotspec import PlotError, PlotSpec, load_rows, numeric  # noqa: E402

_RC = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "doaplots",
    "svg.fonttype": "path",
    "axes.prop_cycle": plt.cycler(
        color=["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    ),
}

_MARKERS = ["o", "s", "^", "D", "v", "*"]

_LABELS = {
    "snr_db": "SNR (dB)",
    "rmspe_rad": "RMSPE (rad)",
    "k": "number of sources K",
    "t": "snapshots T",
    "m": "sensors M",
    "delta_theta_rad": "source separation (rad)",
    "rho_err": "sensor position error level",
    "f1": "micro-F1",
    "k_acc": "source-count accuracy",
    "n": "samples",
    "grid_deg": "angle (deg)",
    "p": "output power",
    "rho": "detection score",
    "epoch": "epoch",
    "train_loss": "training loss",
    "val_f1": "validation micro-F1",
}


def axis_label(column: str) -> str:
    if column in _LABELS:
        return _LABELS[column]
    if column.endswith("_rad"):
        return f"{column[:-4]} (rad)"
    if column.endswith("_deg"):
        return f"{column[:-4]} (deg)"
    if column.endswith("_db"):
        return f"{column[:-3]} (dB)"
    return column


def _atomic_save(fig, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    suffix = os.path.splitext(path)[1]
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=suffix)
    os.close(fd)
    try:
        # Date metadata is the one run-dependent field either writer emits
        fig.savefig(tmp, format=suffix[1:], metadata={"Date": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _draw_line(ax, spec: PlotSpec, rows: list[dict]) -> None:
    if spec.group:
        order: list[str] = []
        for row in rows:
            name = row[spec.group]
            if name not in order:
                order.append(name)
        groups = [(name, [r for r in rows if r[spec.group] == name]) for name in order]
    else:
        groups = [(None, rows)]
    for gi, (name, sub) in enumerate(groups):
        xs = np.array(numeric(sub, spec.x))
        ys = np.array(numeric(sub, spec.y))
        idx = np.argsort(xs, kind="stable")
        ax.plot(
            xs[idx],
            ys[idx],
            marker=_MARKERS[gi % len(_MARKERS)],
            markersize=4,
            linewidth=1.4,
            label=name,
        )
    if spec.group:
        ax.legend(title=axis_label(spec.group) if spec.group not in _LABELS else None)
    if spec.log_y:
        ax.set_yscale("log")


def _draw_heatmap(fig, ax, spec: PlotSpec, rows: list[dict]) -> None:
    xs = numeric(rows, spec.x)
    ys = numeric(rows, spec.y)
    vs = numeric(rows, spec.value)
    ux = sorted(set(xs))
    uy = sorted(set(ys))
    xi = {v: i for i, v in enumerate(ux)}
    yi = {v: i for i, v in enumerate(uy)}
    grid = np.full((len(uy), len(ux)), np.nan)
    for x, y, v in zip(xs, ys, vs):
        grid[yi[y], xi[x]] = v
    if np.isnan(grid).any():
        raise PlotError(
            f"heatmap needs a complete {len(uy)}x{len(ux)} grid of "
            f"({spec.y!r}, {spec.x!r}) pairs"
        )
    half_x = (ux[1] - ux[0]) / 2 if len(ux) > 1 else 0.5
    half_y = (uy[1] - uy[0]) / 2 if len(uy) > 1 else 0.5
    image = ax.imshow(
        grid,
        origin="lower",
        aspect="auto",
        cmap="viridis",
        extent=(ux[0] - half_x, ux[-1] + half_x, uy[0] - half_y, uy[-1] + half_y),
    )
    fig.colorbar(image, ax=ax, label=axis_label(spec.value))


def render(spec: PlotSpec) -> tuple[str, str]:
    """Draw the spec; returns (png_path, svg_path)."""
    rows = load_rows(spec)
    stem = os.path.splitext(spec.out)[0]
    png, svg = stem + ".png", stem + ".svg"
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            if spec.mode == "line":
                _draw_line(ax, spec, rows)
            else:
                _draw_heatmap(fig, ax, spec, rows)
            ax.set_xlabel(axis_label(spec.x))
            ax.set_ylabel(axis_label(spec.y))
            if spec.title:
                ax.set_title(spec.title)
            fig.tight_layout()
            _atomic_save(fig, png)
            _atomic_save(fig, svg)
        finally:
            plt.close(fig)
    return png, svg
