"""Trajectory forecasting with SVG scene inputs."""

__version__ = "0.1.0"
