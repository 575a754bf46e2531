"""Desk-scale trajectory optimization lab: costmaps, grid planning,
sub-goal guided DDP, a deterministic 2D simulator, and a benchmark
harness."""

__version__ = "0.1.0"
