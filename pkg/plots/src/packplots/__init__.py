"""Figures from packcharge run directories.

This package never imports the simulator; it consumes only the public
artifacts of a run: ``trace.csv`` / ``discharge.csv`` time series (first
line a ``# units:`` comment, then a header row) and the ``summary.json`` /
``compare.json`` records.
"""

from .figures import FigureSpec, PlotDataError, render, KINDS

__all__ = ["FigureSpec", "PlotDataError", "render", "KINDS"]
__version__ = "0.1.0"
