"""Flow-based scene completion for desk-scale 3-D point clouds."""

__version__ = "0.1.0"
