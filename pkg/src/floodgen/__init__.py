"""Synthetic precipitation-flood events and flood exceedance-probability maps.

Pipeline: cell-wise gradient-boosted depth estimators, a constrained
generator of synthetic precipitation points, per-cell Low/Medium/High point
pools, all-to-one event assembly with KNN smoothing, distribution checks
against training depths, and exceedance-probability maps.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: E402
from .mesh import Cell, Mesh, StormEvent, assign_point_to_cell, event_mean_depth, stratified_split  # noqa: E402

__all__ = [
    "KERNEL_BACKEND",
    "Cell",
    "Mesh",
    "StormEvent",
    "assign_point_to_cell",
    "event_mean_depth",
    "stratified_split",
]
