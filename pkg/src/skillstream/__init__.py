"""Continual skill discovery and lifelong imitation learning on a synthetic
manipulation benchmark."""

__version__ = "0.1.0"

from .config import RunConfig
from .metrics import LifelongMetrics, SuccessMatrix, compute_lifelong_metrics

__all__ = [
    "RunConfig",
    "LifelongMetrics",
    "SuccessMatrix",
    "compute_lifelong_metrics",
]
