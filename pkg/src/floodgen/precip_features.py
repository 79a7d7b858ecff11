"""Heavy-precipitation indicators, watershed ratios and feature vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyWatershed, MissingCells, NegativePrecipitation, UnknownCell
from .mesh import Mesh, StormEvent

HEAVY_THRESHOLD_IN = 2.0

UNIVERSAL_FEATURES = ("cumulative_in", "peak_in", "duration_h", "channel", "elevation_ft")


def cellwise_feature_names(watershed_count: int) -> list[str]:
    return (["cumulative_in", "peak_in", "duration_h"]
            + [f"hcpr_{w}" for w in range(watershed_count)]
            + [f"hppr_{w}" for w in range(watershed_count)])


def feature_names(mode: str, watershed_count: int) -> list[str]:
    if mode == "universal":
        return list(UNIVERSAL_FEATURES)
    if mode == "cellwise":
        return cellwise_feature_names(watershed_count)
    raise ValueError(f"unknown feature mode {mode!r}")


@dataclass(frozen=True)
class WatershedRatios:
    hcpr: np.ndarray
    hppr: np.ndarray


@dataclass(frozen=True)
class FeatureVector:
    mode: str
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def heavy_indicator(p, threshold: float = HEAVY_THRESHOLD_IN):
    """1 where precipitation strictly exceeds ``threshold``. Accepts scalars or arrays."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0):
        raise NegativePrecipitation("precipitation must be non-negative")
    h = (arr > threshold).astype(np.int64)
    return int(h) if h.ndim == 0 else h


def heavy_ratio(mesh: Mesh, watershed_id: int, per_cell_values, threshold: float = HEAVY_THRESHOLD_IN) -> float:
    members = np.flatnonzero(mesh.watershed == watershed_id)
    if len(members) == 0:
        raise EmptyWatershed(f"watershed {watershed_id} has no cells")
    values = np.asarray(per_cell_values, dtype=float)
    if len(values) != mesh.n_cells:
        raise MissingCells(f"expected {mesh.n_cells} values, got {len(values)}")
    h = heavy_indicator(values[members], threshold)
    area = mesh.area[members]
    return float(np.sum(area * h) / np.sum(area))


def watershed_ratios(mesh: Mesh, values, threshold: float = HEAVY_THRESHOLD_IN) -> np.ndarray:
    """Heavy ratio of every watershed at once. ``values`` may be (n_cells,) or (n_events, n_cells)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != mesh.n_cells:
        raise MissingCells(f"expected {mesh.n_cells} cells, got {values.shape[-1]}")
    h = heavy_indicator(values, threshold)
    W = mesh.watershed_count
    onehot = np.zeros((mesh.n_cells, W))
    onehot[np.arange(mesh.n_cells), mesh.watershed] = mesh.area
    return (h @ onehot) / mesh.watershed_area


def event_ratios(mesh: Mesh, event: StormEvent, threshold: float = HEAVY_THRESHOLD_IN) -> WatershedRatios:
    if event.n_cells != mesh.n_cells or len(event.peak) != mesh.n_cells:
        raise MissingCells(f"event {event.event_id} covers {event.n_cells} of {mesh.n_cells} cells")
    return WatershedRatios(watershed_ratios(mesh, event.cumulative, threshold),
                           watershed_ratios(mesh, event.peak, threshold))


def assemble_features(mesh: Mesh, event: StormEvent, cell_id: int, mode: str,
                      ratios: WatershedRatios | None = None,
                      threshold: float = HEAVY_THRESHOLD_IN) -> FeatureVector:
    if not 0 <= cell_id < mesh.n_cells:
        raise UnknownCell(f"cell {cell_id} not in mesh")
    base = [event.cumulative[cell_id], event.peak[cell_id], event.duration]
    if mode == "universal":
        vals = base + [mesh.channel[cell_id], mesh.elevation[cell_id]]
    elif mode == "cellwise":
        ratios = ratios or event_ratios(mesh, event, threshold)
        vals = base + list(ratios.hcpr) + list(ratios.hppr)
    else:
        raise ValueError(f"unknown feature mode {mode!r}")
    return FeatureVector(mode, np.asarray(vals, dtype=float))


def cellwise_matrix(mesh: Mesh, cumulative, peak, duration, threshold: float = HEAVY_THRESHOLD_IN) -> np.ndarray:
    """Cellwise feature rows for many events: shape (n_events, n_cells, 3 + 2W).

    Row [e, c] equals ``assemble_features(..., cell_id=c, mode="cellwise")`` of event e.
    """
    cumulative = np.atleast_2d(np.asarray(cumulative, float))
    peak = np.atleast_2d(np.asarray(peak, float))
    duration = np.atleast_1d(np.asarray(duration, float))
    E, n = cumulative.shape
    W = mesh.watershed_count
    hc = watershed_ratios(mesh, cumulative, threshold)
    hp = watershed_ratios(mesh, peak, threshold)
    out = np.empty((E, n, 3 + 2 * W))
    out[:, :, 0] = cumulative
    out[:, :, 1] = peak
    out[:, :, 2] = duration[:, None]
    out[:, :, 3:3 + W] = hc[:, None, :]
    out[:, :, 3 + W:] = hp[:, None, :]
    return out


def universal_matrix(mesh: Mesh, cumulative, peak, duration) -> np.ndarray:
    """Universal feature rows, shape (n_events, n_cells, 5)."""
    cumulative = np.atleast_2d(np.asarray(cumulative, float))
    peak = np.atleast_2d(np.asarray(peak, float))
    duration = np.atleast_1d(np.asarray(duration, float))
    E, n = cumulative.shape
    out = np.empty((E, n, 5))
    out[:, :, 0] = cumulative
    out[:, :, 1] = peak
    out[:, :, 2] = duration[:, None]
    out[:, :, 3] = mesh.channel[None, :]
    out[:, :, 4] = mesh.elevation[None, :]
    return out
