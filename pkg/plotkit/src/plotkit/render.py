"""Render dcqn plot-data JSON (schema v1) into PNG/SVG figures.

Three figure kinds are supported: ``fan`` (nested confidence bands from
symmetric quantile pairs), ``scenarios`` (spaghetti trajectories), and
``heatmap`` (a covariance matrix on the fixed [-1, 1] color range so static
and dynamic matrices stay visually comparable).

Rendering is read-only and deterministic: input files are never touched and
no timestamps enter the image content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# Fixed salt keeps SVG element ids identical between runs.
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

import matplotlib.pyplot as plt
import numpy as np

SCHEMA_VERSION = 1
KINDS = ("fan", "scenarios", "heatmap")
# Band pairs for the fan chart: 10%-90% down to 40%-60%.
BAND_PAIRS = ((0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6))

HEATMAP_CMAP = "RdBu_r"
# Fixed geometry so tests can locate cell centers in pixel space.
HEATMAP_FIGSIZE = (6.0, 5.0)
HEATMAP_AXES_RECT = (0.10, 0.10, 0.70, 0.80)
DPI = 100


class RenderError(Exception):
    """Raised for missing inputs, schema mismatches, or kind mismatches."""


@dataclass(frozen=True)
class PlotJob:
    """One rendering task: an export file, a figure kind, an output path."""

    input_path: Path
    kind: str
    output_path: Path
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RenderError(f"unrecognized figure kind {self.kind!r}; "
                              f"expected one of {KINDS}")


def load_export(path: Path) -> dict:
    if not path.exists():
        raise RenderError(f"input file not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    version = payload.get("schema")
    if version != SCHEMA_VERSION:
        raise RenderError(
            f"{path}: unsupported export schema version {version!r} "
            f"(expected {SCHEMA_VERSION})"
        )
    return payload


def kind_of_payload(payload: dict) -> str:
    kind = payload.get("kind")
    if kind == "covariance":
        return "heatmap"
    if kind in ("fan", "scenarios"):
        return kind
    raise RenderError(f"export file has unknown kind {kind!r}")


def _save(fig, path: Path, dpi: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    # Date metadata would make SVG output differ between runs.
    metadata = {"Date": None} if path.suffix.lower() == ".svg" else None
    fig.savefig(path, dpi=dpi, metadata=metadata)
    plt.close(fig)


def _render_fan(payload: dict, job: PlotJob) -> None:
    levels = np.asarray(payload["levels"], dtype=float)
    curves = np.asarray(payload["curves"], dtype=float)
    measured = np.asarray(payload["measured"], dtype=float)
    hours = np.arange(curves.shape[1])

    def curve_at(level):
        matches = np.nonzero(np.isclose(levels, level))[0]
        if matches.size == 0:
            raise RenderError(f"fan export lacks level {level}")
        return curves[matches[0]]

    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (low, high) in enumerate(BAND_PAIRS):
        ax.fill_between(hours, curve_at(low), curve_at(high),
                        color="tab:blue", alpha=0.15 + 0.08 * i, linewidth=0,
                        label=f"{int(low * 100)}%-{int(high * 100)}%")
    median = np.nonzero(np.isclose(levels, 0.5))[0]
    if median.size:
        ax.plot(hours, curves[median[0]], color="tab:blue", lw=1.2, label="median")
    ax.plot(hours, measured, color="black", lw=1.5, label="measured")
    ax.set_xlabel("hour")
    ax.set_ylabel("power (p.u.)")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(payload.get("date") or "")
    ax.legend(loc="upper right", fontsize=8, ncol=2)
    _save(fig, job.output_path, job.style.get("dpi", DPI))


def _render_scenarios(payload: dict, job: PlotJob) -> None:
    scenarios = np.asarray(payload["scenarios"], dtype=float)
    measured = np.asarray(payload["measured"], dtype=float)
    hours = np.arange(scenarios.shape[1])

    fig, ax = plt.subplots(figsize=(7, 4))
    for row in scenarios:
        ax.plot(hours, row, color="tab:blue", alpha=0.25, lw=0.7)
    ax.plot(hours, measured, color="black", lw=1.6, label="measured")
    ax.set_xlabel("hour")
    ax.set_ylabel("power (p.u.)")
    ax.set_ylim(-0.02, 1.02)
    title = payload.get("date") or ""
    model = payload.get("model")
    ax.set_title(f"{title} ({model})" if model else title)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, job.output_path, job.style.get("dpi", DPI))


def _render_heatmap(payload: dict, job: PlotJob) -> None:
    matrix = np.asarray(payload["matrix"], dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise RenderError("covariance export must hold a square matrix")

    fig = plt.figure(figsize=HEATMAP_FIGSIZE)
    ax = fig.add_axes(HEATMAP_AXES_RECT)
    image = ax.imshow(matrix, cmap=HEATMAP_CMAP, vmin=-1.0, vmax=1.0,
                      interpolation="nearest", origin="upper", aspect="auto")
    ax.set_xlabel("hour")
    ax.set_ylabel("hour")
    label = payload.get("date") or payload.get("model") or ""
    ax.set_title(label)
    cax = fig.add_axes((0.84, 0.10, 0.04, 0.80))
    fig.colorbar(image, cax=cax)
    _save(fig, job.output_path, job.style.get("dpi", DPI))


_RENDERERS = {
    "fan": _render_fan,
    "scenarios": _render_scenarios,
    "heatmap": _render_heatmap,
}


def render(job: PlotJob) -> Path:
    """Render one export file to the job's output path; returns that path."""
    payload = load_export(Path(job.input_path))
    payload_kind = kind_of_payload(payload)
    if payload_kind != job.kind:
        raise RenderError(
            f"{job.input_path}: export holds a {payload_kind!r} figure, "
            f"job requested {job.kind!r}"
        )
    _RENDERERS[job.kind](payload, job)
    return Path(job.output_path)


def heatmap_cell_center(n_cells: int, row: int, col: int) -> tuple[int, int]:
    """Pixel coordinates of a heatmap cell center at the default geometry.

    Exposed so image tests can decode exact cell colors.
    """
    width = int(HEATMAP_FIGSIZE[0] * DPI)
    height = int(HEATMAP_FIGSIZE[1] * DPI)
    x0, y0, w, h = HEATMAP_AXES_RECT
    px = x0 * width + (col + 0.5) / n_cells * w * width
    py = (1.0 - y0 - h) * height + (row + 0.5) / n_cells * h * height
    return int(round(px)), int(round(py))
