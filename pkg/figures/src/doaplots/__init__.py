"""Publication-style figures from the beamforming toolkit's CSV outputs."""

from .plotspec import PlotSpec, PlotError, load_rows
from .render import render

__all__ = ["PlotSpec", "PlotError", "load_rows", "render"]
