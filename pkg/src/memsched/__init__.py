"""Tensor-granularity GPU memory scheduling: swap, recompute and release
planning for concurrent training jobs, plus a discrete-event simulator."""

__version__ = "0.1.0"
