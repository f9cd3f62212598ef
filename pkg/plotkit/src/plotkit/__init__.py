"""Figure rendering for dcqn plot-data exports (schema v1)."""

from .render import PlotJob, RenderError, render

__all__ = ["PlotJob", "RenderError", "render"]
__version__ = "0.1.0"
