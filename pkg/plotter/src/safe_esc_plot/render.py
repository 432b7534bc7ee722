"""Turn trajectory CSVs plus a scenario JSON into a figure.

1D scenarios plot the estimate and the probed point against time with the
safety boundary drawn as horizontal constraint lines (zeros of h over the
plotted range).  2D scenarios plot one polyline per layer over the barrier
geometry: exact circle outlines for the min-of-circles family, the marched
zero-level contour of h for everything else, plus start and theta* markers.

Rendering is read-only over its inputs and deterministic: fixed figure
geometry, no timestamps, identical inputs give identical image bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

LAYER_FILES = {
    "model-free": "model_free.csv",
    "averaged": "averaged.csv",
    "model-based": "model_based.csv",
    "unconstrained-baseline": "unconstrained_baseline.csv",
}

LAYER_COLORS = {
    "model-free": "tab:blue",
    "averaged": "tab:orange",
    "model-based": "tab:green",
    "unconstrained-baseline": "tab:red",
}

FIGSIZE = (7.0, 5.0)
DPI = 150
CONTOUR_CELLS = 400


class MalformedCsv(ValueError):
    """A layer CSV is missing columns or contains no data rows."""


class UnsupportedScenario(ValueError):
    """The scenario document cannot be interpreted for plotting."""


@dataclass
class PlotJob:
    layer_csvs: dict[str, Path]
    scenario: dict
    output_path: Path
    show_probe: bool = True
    shade_unsafe: bool = True
    styles: dict = field(default_factory=dict)


def discover_layers(run_dir) -> dict[str, Path]:
    """Map layer names to CSV paths present in a run directory."""
    run_dir = Path(run_dir)
    found = {
        layer: run_dir / name
        for layer, name in LAYER_FILES.items()
        if (run_dir / name).exists()
    }
    if not found:
        raise MalformedCsv(f"no layer CSVs found in {run_dir}")
    return found


def load_scenario(path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("barrier", "initial_estimate", "cost", "analysis_box"):
        if key not in doc:
            raise UnsupportedScenario(f"scenario JSON missing {key!r}")
    return doc


def expected_columns(dimension: int) -> list[str]:
    return (
        ["t"]
        + [f"theta_hat_{i + 1}" for i in range(dimension)]
        + [f"theta_{i + 1}" for i in range(dimension)]
        + ["J", "Jhat", "h_probe", "h_estimate"]
    )


def load_layer_csv(path, dimension: int) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise MalformedCsv(f"{path}: cannot read file") from exc
    if not lines:
        raise MalformedCsv(f"{path}: empty file")
    columns = lines[0].split(",")
    expected = expected_columns(dimension)
    if columns != expected:
        raise MalformedCsv(
            f"{path}: header {columns} does not match expected {expected}"
        )
    if len(lines) < 2:
        raise MalformedCsv(f"{path}: no data rows")
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    if data.size == 0 or data.shape[0] == 0:
        raise MalformedCsv(f"{path}: no data rows")
    if data.shape[1] != len(expected):
        raise MalformedCsv(f"{path}: ragged rows")
    if np.isnan(data[:, 0]).any():
        raise MalformedCsv(f"{path}: non-numeric time column")
    return {name: data[:, idx] for idx, name in enumerate(expected)}


# --- barrier geometry from the scenario document ---


def barrier_value(barrier_doc: dict, points: np.ndarray) -> np.ndarray:
    """Evaluate h on (..., n) points from the documented family parameters."""
    family = barrier_doc.get("family")
    params = barrier_doc.get("params", {})
    pts = np.asarray(points, dtype=float)
    if family == "half-space":
        normal = np.asarray(params["normal"], dtype=float)
        return params["offset"] - pts @ normal
    if family == "trig-field":
        k1 = params["freq1"] * np.pi
        k2 = params["freq2"] * np.pi
        return np.cos(k1 * pts[..., 0]) * np.sin(k2 * pts[..., 1])
    if family == "min-of-circles":
        centers = np.asarray(params["centers"], dtype=float)
        radii = np.asarray(params["radii"], dtype=float)
        dists = np.linalg.norm(pts[..., None, :] - centers, axis=-1)
        return np.min(dists - radii, axis=-1)
    if family == "ball":
        center = np.asarray(params["center"], dtype=float)
        diff = pts - center
        return params["radius"] ** 2 - np.sum(diff * diff, axis=-1)
    raise UnsupportedScenario(f"unknown barrier family {family!r}")


def _constraint_levels_1d(barrier_doc, lo: float, hi: float) -> list[float]:
    """Zeros of h(theta) over [lo, hi] by dense sampling + bisection."""
    thetas = np.linspace(lo, hi, 4097)
    h = barrier_value(barrier_doc, thetas[:, None])
    zeros = []
    sign = np.sign(h)
    for i in np.flatnonzero(np.diff(sign) != 0):
        a, b = thetas[i], thetas[i + 1]
        fa = h[i]
        for _ in range(60):
            mid = 0.5 * (a + b)
            fm = float(barrier_value(barrier_doc, np.array([[mid]]))[0])
            if (fa < 0) == (fm < 0):
                a, fa = mid, fm
            else:
                b = mid
        zeros.append(0.5 * (a + b))
    return zeros


def _render_1d(job: PlotJob, layers: dict, ax) -> dict:
    summary = {"layers": {}, "boundary": []}
    theta_lo = np.inf
    theta_hi = -np.inf
    for layer, data in layers.items():
        color = LAYER_COLORS.get(layer, "tab:gray")
        ax.plot(
            data["t"], data["theta_hat_1"], color=color, lw=1.6, label=layer
        )
        if job.show_probe:
            ax.plot(data["t"], data["theta_1"], color=color, lw=0.4, alpha=0.35)
        summary["layers"][layer] = int(data["t"].shape[0])
        theta_lo = min(theta_lo, float(np.min(data["theta_1"])))
        theta_hi = max(theta_hi, float(np.max(data["theta_1"])))
    pad = 0.15 * (theta_hi - theta_lo + 1e-12)
    lo, hi = theta_lo - pad, theta_hi + pad
    for zero in _constraint_levels_1d(job.scenario["barrier"], lo, hi):
        ax.axhline(zero, color="black", lw=1.2, ls="--")
        summary["boundary"].append({"type": "constraint-line", "theta": zero})
        if job.shade_unsafe:
            # shade toward the unsafe side of this zero
            probe_above = float(
                barrier_value(job.scenario["barrier"], np.array([[zero + 1e-4]]))[0]
            )
            span = (zero, hi) if probe_above <= 0 else (lo, zero)
            ax.axhspan(span[0], span[1], color="black", alpha=0.08, lw=0)
    ax.set_xlabel("t")
    ax.set_ylabel("theta")
    ax.set_ylim(lo, hi)
    return summary


def _render_2d(job: PlotJob, layers: dict, ax) -> dict:
    summary = {"layers": {}, "boundary": []}
    xs_min, xs_max = np.inf, -np.inf
    ys_min, ys_max = np.inf, -np.inf
    for layer, data in layers.items():
        color = LAYER_COLORS.get(layer, "tab:gray")
        ax.plot(
            data["theta_hat_1"], data["theta_hat_2"], color=color, lw=1.6, label=layer
        )
        if job.show_probe:
            ax.plot(
                data["theta_1"], data["theta_2"], color=color, lw=0.3, alpha=0.25
            )
        summary["layers"][layer] = int(data["theta_hat_1"].shape[0])
        xs_min = min(xs_min, float(np.min(data["theta_1"])))
        xs_max = max(xs_max, float(np.max(data["theta_1"])))
        ys_min = min(ys_min, float(np.min(data["theta_2"])))
        ys_max = max(ys_max, float(np.max(data["theta_2"])))

    barrier_doc = job.scenario["barrier"]
    box = job.scenario["analysis_box"]
    lower = np.minimum(np.asarray(box["lower"], dtype=float), [xs_min, ys_min])
    upper = np.maximum(np.asarray(box["upper"], dtype=float), [xs_max, ys_max])
    span = upper - lower
    lower = lower - 0.1 * span
    upper = upper + 0.1 * span

    if barrier_doc.get("family") == "min-of-circles":
        params = barrier_doc["params"]
        for center, radius in zip(params["centers"], params["radii"]):
            ax.add_patch(
                plt.Circle(
                    center,
                    radius,
                    facecolor="0.85" if job.shade_unsafe else "none",
                    edgecolor="black",
                    lw=1.2,
                )
            )
            summary["boundary"].append(
                {"type": "circle", "center": list(map(float, center)), "radius": float(radius)}
            )
    else:
        xs = np.linspace(lower[0], upper[0], CONTOUR_CELLS)
        ys = np.linspace(lower[1], upper[1], CONTOUR_CELLS)
        mesh_x, mesh_y = np.meshgrid(xs, ys, indexing="ij")
        grid = np.stack([mesh_x, mesh_y], axis=-1)
        h = barrier_value(barrier_doc, grid)
        ax.contour(mesh_x, mesh_y, h, levels=[0.0], colors="black", linewidths=1.2)
        if job.shade_unsafe:
            ax.contourf(mesh_x, mesh_y, h, levels=[-np.inf, 0.0], colors=["0.85"])
        summary["boundary"].append({"type": "contour", "level": 0.0})

    start = job.scenario["initial_estimate"]
    theta_star = job.scenario["cost"]["theta_star"]
    ax.plot(*start, marker="o", color="black", ms=6, ls="none", label="start")
    ax.plot(*theta_star, marker="*", color="goldenrod", ms=12, ls="none", label="theta*")
    summary["markers"] = {"start": list(map(float, start)), "theta_star": list(map(float, theta_star))}
    ax.set_xlim(lower[0], upper[0])
    ax.set_ylim(lower[1], upper[1])
    ax.set_xlabel("theta_1")
    ax.set_ylabel("theta_2")
    ax.set_aspect("equal")
    return summary


def render(job: PlotJob) -> dict:
    """Render the job to its output path and return a summary of the artists."""
    dimension = len(job.scenario["initial_estimate"])
    if dimension not in (1, 2):
        raise UnsupportedScenario(f"cannot plot dimension {dimension}")
    layers = {
        layer: load_layer_csv(path, dimension)
        for layer, path in sorted(job.layer_csvs.items())
    }
    if not layers:
        raise MalformedCsv("no layers to plot")
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    try:
        if dimension == 1:
            summary = _render_1d(job, layers, ax)
        else:
            summary = _render_2d(job, layers, ax)
        ax.legend(loc="best", fontsize=8)
        name = job.scenario.get("name", "")
        ax.set_title(name)
        fig.savefig(job.output_path)
    finally:
        plt.close(fig)
    summary["output"] = str(job.output_path)
    return summary
