"""Render figures from safe-esc run directories.

This package consumes only the documented external interfaces of the
simulator: trajectory CSVs (header t,theta_hat_1..n,theta_1..n,J,Jhat,
h_probe,h_estimate) and scenario JSON files.  It never imports the
simulator.
"""

__version__ = "0.1.0"

from .render import MalformedCsv, PlotJob, discover_layers, render

__all__ = ["MalformedCsv", "PlotJob", "discover_layers", "render", "__version__"]
