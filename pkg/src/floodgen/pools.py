"""Per-cell Low/Medium/High thresholds and the 27-bucket point pools."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptStore, DataError, MeshFingerprintMismatch, NegativeValue, TooFewEvents
from .mesh import Mesh, StormEvent
from .point_generator import PointRecords
from .store import atomic_dir, dumps, load_sealed, seal

log = logging.getLogger(__name__)

FEATURES = ("cumulative", "peak", "duration")
LEVELS = ("L", "M", "H")
DEGENERATE_EPS = 1e-9
N_BUCKETS = 27


def bucket_code(cum_class, peak_class, dur_class):
    return cum_class * 9 + peak_class * 3 + dur_class


def bucket_label(code: int) -> str:
    return LEVELS[code // 9] + LEVELS[(code // 3) % 3] + LEVELS[code % 3]


@dataclass(frozen=True)
class ThresholdSet:
    """Boundaries of one cell. Arrays are ordered as ``FEATURES``."""

    mu: np.ndarray
    sigma: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    theta1: float
    theta2: float

    def bounds(self, feature: str) -> tuple[float, float]:
        j = FEATURES.index(feature)
        return float(self.b1[j]), float(self.b2[j])


@dataclass(frozen=True)
class MeshThresholds:
    """Boundaries for every cell: arrays of shape (n_cells, 3)."""

    mu: np.ndarray
    sigma: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    theta1: float
    theta2: float

    def cell(self, cell_id: int) -> ThresholdSet:
        return ThresholdSet(self.mu[cell_id], self.sigma[cell_id], self.b1[cell_id], self.b2[cell_id],
                            self.theta1, self.theta2)

    @property
    def n_cells(self) -> int:
        return len(self.mu)


def _boundaries(mu, sigma, theta1, theta2):
    b1 = np.maximum(0.0, mu - theta1 * sigma)
    b2 = mu + theta2 * sigma
    # zero spread would leave Medium empty
    b2 = np.where(b2 <= b1, b1 + DEGENERATE_EPS, b2)
    return b1, b2


def _feature_stack(train_events: Sequence[StormEvent]) -> np.ndarray:
    """(n_events, n_cells, 3) values of cumulative, peak and replicated duration."""
    return np.stack([np.column_stack([e.cumulative, e.peak, np.full(e.n_cells, e.duration)])
                     for e in train_events])


def compute_all_thresholds(train_events: Sequence[StormEvent], mesh: Mesh, theta1: float = 0.5,
                           theta2: float = 0.5) -> MeshThresholds:
    if len(train_events) < 2:
        raise TooFewEvents(f"need at least 2 training events, got {len(train_events)}")
    if theta1 <= 0 or theta2 <= 0:
        raise DataError("theta1 and theta2 must be positive")
    vals = _feature_stack(train_events)
    if vals.shape[1] != mesh.n_cells:
        raise DataError("events do not cover the mesh")
    mu = vals.mean(axis=0)
    sigma = vals.std(axis=0, ddof=1)
    b1, b2 = _boundaries(mu, sigma, theta1, theta2)
    return MeshThresholds(mu, sigma, b1, b2, float(theta1), float(theta2))


def compute_thresholds(train_events: Sequence[StormEvent], mesh: Mesh, cell_id: int, theta1: float = 0.5,
                       theta2: float = 0.5) -> ThresholdSet:
    return compute_all_thresholds(train_events, mesh, theta1, theta2).cell(cell_id)


def classify_codes(values, b1, b2) -> np.ndarray:
    """0/1/2 for L/M/H: L is [0, b1], M is (b1, b2], H is (b2, inf)."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise NegativeValue("values must be non-negative")
    return (values > b1).astype(np.int64) + (values > b2).astype(np.int64)


def classify(value: float, thresholds: ThresholdSet, feature: str) -> str:
    b1, b2 = thresholds.bounds(feature)
    return LEVELS[int(classify_codes(value, b1, b2))]


@dataclass
class CellPool:
    cell_id: int
    buckets: dict[str, np.ndarray]

    def size(self) -> int:
        return sum(len(v) for v in self.buckets.values())


class PoolIndex:
    """All cell pools in CSR form.

    ``order`` lists point indices grouped by (cell, bucket) with point-cloud
    order kept inside each group; group ``cell * 27 + bucket`` occupies
    ``order[offsets[g]:offsets[g + 1]]``.
    """

    def __init__(self, points: PointRecords, thresholds: MeshThresholds, order: np.ndarray,
                 offsets: np.ndarray, skipped: int, mesh_fingerprint: str,
                 duration_bounds: tuple[float, float]):
        self.points = points
        self.thresholds = thresholds
        self.order = order
        self.offsets = offsets
        self.skipped = int(skipped)
        self.mesh_fingerprint = mesh_fingerprint
        self.duration_bounds = duration_bounds
        self.sizes = np.diff(offsets).reshape(-1, N_BUCKETS)

    @property
    def n_cells(self) -> int:
        return self.sizes.shape[0]

    @property
    def n_indexed(self) -> int:
        return int(self.offsets[-1])

    def bucket(self, cell_id: int, code: int) -> np.ndarray:
        g = cell_id * N_BUCKETS + code
        return self.order[self.offsets[g]:self.offsets[g + 1]]

    def cell_pool(self, cell_id: int) -> CellPool:
        return CellPool(cell_id, {bucket_label(c): self.bucket(cell_id, c) for c in range(N_BUCKETS)})

    def __iter__(self):
        return (self.cell_pool(c) for c in range(self.n_cells))

    def duration_class(self, duration: float) -> int:
        lo, hi = self.duration_bounds
        return int(classify_codes(duration, lo, hi))

    # persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Index listing CSV plus a sealed manifest, written atomically."""
        with atomic_dir(path) as tmp:
            cells = np.repeat(np.arange(self.n_cells * N_BUCKETS), np.diff(self.offsets))
            table = np.column_stack([cells // N_BUCKETS, (cells % N_BUCKETS) // 9,
                                     (cells % 9) // 3, cells % 3, self.order])
            with open(tmp / "pool_index.csv", "w") as fh:
                fh.write("cell_id,cum_class,peak_class,dur_class,point_index\n")
                np.savetxt(fh, table, fmt="%d", delimiter=",")
            t = self.thresholds
            manifest = seal({
                "theta1": t.theta1,
                "theta2": t.theta2,
                "degenerate_eps": DEGENERATE_EPS,
                "mesh_fingerprint": self.mesh_fingerprint,
                "n_points": len(self.points),
                "skipped": self.skipped,
                "duration_bounds": [float(v).hex() for v in self.duration_bounds],
                "cells": [{"mu": [float(v).hex() for v in t.mu[c]],
                           "sigma": [float(v).hex() for v in t.sigma[c]]} for c in range(t.n_cells)],
            })
            (tmp / "manifest.json").write_text(dumps(manifest))

    @classmethod
    def load(cls, path, points: PointRecords, mesh: Mesh | None = None) -> "PoolIndex":
        path = Path(path)
        m = load_sealed(path / "manifest.json")
        if mesh is not None and m["mesh_fingerprint"] != mesh.fingerprint:
            raise MeshFingerprintMismatch("pools were built on a different mesh")
        if m["n_points"] != len(points):
            raise CorruptStore("point cloud size differs from pool manifest")
        mu = np.array([[float.fromhex(v) for v in c["mu"]] for c in m["cells"]])
        sigma = np.array([[float.fromhex(v) for v in c["sigma"]] for c in m["cells"]])
        b1, b2 = _boundaries(mu, sigma, m["theta1"], m["theta2"])
        thr = MeshThresholds(mu, sigma, b1, b2, m["theta1"], m["theta2"])
        table = np.loadtxt(path / "pool_index.csv", delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        n_cells = len(mu)
        if len(table):
            groups = table[:, 0] * N_BUCKETS + bucket_code(table[:, 1], table[:, 2], table[:, 3])
            if np.any(np.diff(groups) < 0):
                raise CorruptStore("pool index is not grouped by cell and bucket")
            order = table[:, 4]
        else:
            groups = np.empty(0, np.int64)
            order = np.empty(0, np.int64)
        counts = np.bincount(groups, minlength=n_cells * N_BUCKETS)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        dur = tuple(float.fromhex(v) for v in m["duration_bounds"])
        return cls(points, thr, order, offsets, m["skipped"], m["mesh_fingerprint"], dur)


def aggregate_duration_bounds(train_events: Sequence[StormEvent], theta1: float, theta2: float):
    """Duration boundaries from the per-event durations (identical for every cell)."""
    d = np.array([e.duration for e in train_events], dtype=float)
    b1, b2 = _boundaries(d.mean(), d.std(ddof=1), theta1, theta2)
    return float(b1), float(b2)


def build_pools(point_cloud: PointRecords, mesh: Mesh, thresholds: MeshThresholds,
                duration_bounds: tuple[float, float] | None = None) -> PoolIndex:
    """Assign every point to its nearest-centroid cell and LMH bucket.

    Points outside the study area are skipped and counted.
    """
    if thresholds.n_cells != mesh.n_cells:
        raise DataError("thresholds must exist for every cell")
    if len(point_cloud) == 0:
        raise DataError("point cloud is empty")
    data = point_cloud.data
    cell, inside = mesh.assign(data[:, 0], data[:, 1])
    idx = np.flatnonzero(inside)
    c = cell[idx]
    codes = [classify_codes(data[idx, 2 + j], thresholds.b1[c, j], thresholds.b2[c, j]) for j in range(3)]
    group = c * N_BUCKETS + bucket_code(*codes)
    perm = np.argsort(group, kind="stable")
    order = idx[perm].astype(np.int64)
    counts = np.bincount(group, minlength=mesh.n_cells * N_BUCKETS)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    skipped = len(data) - len(idx)
    if skipped:
        log.info("build_pools: skipped %d of %d points outside the study area", skipped, len(data))
    if duration_bounds is None:
        duration_bounds = (float(thresholds.b1[0, 2]), float(thresholds.b2[0, 2]))
    return PoolIndex(point_cloud, thresholds, order, offsets, skipped, mesh.fingerprint, duration_bounds)
