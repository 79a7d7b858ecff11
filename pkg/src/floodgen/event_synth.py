"""All-to-one assembly of synthetic precipitation-flood events."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, EmptyPool, MeshFingerprintMismatch
from .mesh import Mesh, StormEvent
from .pools import N_BUCKETS, CellPool, PoolIndex, bucket_code
from .precip_features import HEAVY_THRESHOLD_IN, WatershedRatios, watershed_ratios
from .store import atomic_dir, dumps

log = logging.getLogger(__name__)

# bucket codes sharing a duration class, in code order
_ELIGIBLE = np.array([[bucket_code(c, p, d) for c in range(3) for p in range(3)] for d in range(3)])


@dataclass(frozen=True)
class KnnRule:
    """K grows linearly with duration: 15 h maps to K = 50 with the defaults."""

    slope: float = 10.0 / 3.0
    k_min: int = 5
    k_max: int = 100
    fixed_k: int | None = None

    def k_for(self, duration: float) -> int:
        if self.fixed_k is not None:
            return int(self.fixed_k)
        return knn_k_for_duration(duration, self.k_min, self.k_max, self.slope)


@dataclass
class SyntheticEvent:
    event_id: int
    duration: float
    duration_class: int
    raw_cumulative: np.ndarray
    raw_peak: np.ndarray
    cumulative: np.ndarray
    peak: np.ndarray
    ratios: WatershedRatios
    depth: np.ndarray
    seed: tuple
    k: int
    fallback_cells: int
    mesh_fingerprint: str = ""

    def to_storm_event(self) -> StormEvent:
        return StormEvent(self.event_id, self.cumulative, self.peak, self.duration, self.depth)

    def same_as(self, other: "SyntheticEvent") -> bool:
        arrays = ("raw_cumulative", "raw_peak", "cumulative", "peak", "depth")
        return (self.event_id == other.event_id and self.duration == other.duration
                and self.duration_class == other.duration_class and self.k == other.k
                and self.fallback_cells == other.fallback_cells and tuple(self.seed) == tuple(other.seed)
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
                and np.array_equal(self.ratios.hcpr, other.ratios.hcpr)
                and np.array_equal(self.ratios.hppr, other.ratios.hppr))


def sample_global_duration(pools: PoolIndex, rng: np.random.Generator) -> tuple[float, int]:
    """Duration of one point drawn uniformly from every bucket of every cell."""
    if pools.n_indexed == 0:
        raise EmptyPool("aggregated pool is empty")
    k = int(rng.integers(pools.n_indexed))
    duration = float(pools.points.data[pools.order[k], 4])
    return duration, pools.duration_class(duration)


def _draw_from_sizes(sizes: np.ndarray, u: np.ndarray):
    """Position inside the concatenation of buckets, per row of ``sizes``."""
    total = sizes.sum(axis=1)
    k = np.minimum(np.floor(u * total).astype(np.int64), np.maximum(total - 1, 0))
    cums = np.cumsum(sizes, axis=1)
    j = (cums <= k[:, None]).sum(axis=1)
    j = np.minimum(j, sizes.shape[1] - 1)
    before = np.where(j > 0, np.take_along_axis(cums, np.maximum(j - 1, 0)[:, None], 1)[:, 0], 0)
    return j, k - before, total


def sample_cells(pools: PoolIndex, duration_class: int, rng: np.random.Generator):
    """One (cumulative, peak) per cell; returns (cum, peak, fallback flags).

    Draws uniformly over the union of the nine buckets matching the duration
    class; an empty union widens to all 27 buckets, and an empty cell gets
    (0, 0) with its fallback flag set. Consumes one uniform per cell.
    """
    n = pools.n_cells
    u = rng.random(n)
    elig = _ELIGIBLE[duration_class]
    sizes9 = pools.sizes[:, elig]
    use_all = sizes9.sum(axis=1) == 0
    codes = np.broadcast_to(elig, (n, 9))
    j, pos, total = _draw_from_sizes(sizes9, u)
    code = codes[np.arange(n), j]
    if use_all.any():
        a = np.flatnonzero(use_all)
        j27, pos27, total27 = _draw_from_sizes(pools.sizes[a], u[a])
        code[a] = j27
        pos[a] = pos27
        total[a] = total27
    empty = total == 0
    cum = np.zeros(n)
    peak = np.zeros(n)
    ok = np.flatnonzero(~empty)
    if len(ok):
        g = ok * N_BUCKETS + code[ok]
        point = pools.order[pools.offsets[g] + pos[ok]]
        cum[ok] = pools.points.data[point, 2]
        peak[ok] = pools.points.data[point, 3]
    return cum, peak, use_all


def sample_cell_features(pool: CellPool, duration_class: int, rng: np.random.Generator,
                         points=None) -> tuple[float, float, bool]:
    """Single-cell version of :func:`sample_cells`; ``points`` is the point cloud."""
    if points is None:
        raise DataError("point cloud required to resolve pool indices")
    labels = list(pool.buckets)
    u = rng.random()
    chosen = [pool.buckets[labels[c]] for c in _ELIGIBLE[duration_class]]
    widened = sum(len(b) for b in chosen) == 0
    if widened:
        chosen = [pool.buckets[lab] for lab in labels]
    union = np.concatenate(chosen)
    if len(union) == 0:
        return 0.0, 0.0, True
    idx = int(union[min(int(np.floor(u * len(union))), len(union) - 1)])
    return float(points.data[idx, 2]), float(points.data[idx, 3]), widened


def knn_k_for_duration(duration: float, k_min: int = 5, k_max: int = 100, slope: float = 10.0 / 3.0) -> int:
    k = int(np.floor(slope * duration + 0.5))
    return int(min(max(k, k_min), k_max))


def knn_smooth(mesh: Mesh, per_cell_values, K: int) -> np.ndarray:
    values = np.asarray(per_cell_values, dtype=float)
    if len(values) != mesh.n_cells:
        raise DataError(f"expected {mesh.n_cells} values, got {len(values)}")
    if K < 1:
        raise DataError("K must be >= 1")
    if K > mesh.n_cells:
        warnings.warn(f"K={K} exceeds cell count {mesh.n_cells}; capped", RuntimeWarning, stacklevel=2)
        K = mesh.n_cells
    if K == 1:
        return values.copy()
    nb = values[mesh.knn_indices(K)]
    # rounding can push a mean outside its inputs
    return np.clip(nb.mean(axis=1), nb.min(axis=1), nb.max(axis=1))


def _check_inputs(pools: PoolIndex, mesh: Mesh, estimator) -> None:
    if pools.mesh_fingerprint != mesh.fingerprint:
        raise MeshFingerprintMismatch("pools were built on a different mesh")
    if estimator.mesh_fingerprint != mesh.fingerprint:
        raise MeshFingerprintMismatch("estimator was trained on a different mesh")


def _sample_fields(pools: PoolIndex, mesh: Mesh, seed, knn_rule: KnnRule):
    rng = np.random.default_rng(seed)
    duration, dclass = sample_global_duration(pools, rng)
    raw_cum, raw_peak, fallback = sample_cells(pools, dclass, rng)
    k = min(knn_rule.k_for(duration), mesh.n_cells)
    cum = knn_smooth(mesh, raw_cum, k)
    peak = knn_smooth(mesh, raw_peak, k)
    peak = np.minimum(peak, cum)
    return dict(duration=duration, duration_class=dclass, raw_cumulative=raw_cum, raw_peak=raw_peak,
                cumulative=cum, peak=peak, k=k, fallback_cells=int(fallback.sum()))


def _finish(fields: list[dict], seeds: list, ids: list[int], mesh: Mesh, estimator, heavy_threshold: float,
            workers: int) -> list[SyntheticEvent]:
    cum = np.stack([f["cumulative"] for f in fields])
    peak = np.stack([f["peak"] for f in fields])
    dur = np.array([f["duration"] for f in fields])
    X = estimator.features(mesh, cum, peak, dur)
    depth = estimator.predict_matrix(X, workers)
    hc = watershed_ratios(mesh, cum, heavy_threshold)
    hp = watershed_ratios(mesh, peak, heavy_threshold)
    out = []
    for i, f in enumerate(fields):
        out.append(SyntheticEvent(ids[i], f["duration"], f["duration_class"], f["raw_cumulative"],
                                  f["raw_peak"], f["cumulative"], f["peak"], WatershedRatios(hc[i], hp[i]),
                                  np.maximum(depth[i], 0.0), tuple(np.atleast_1d(seeds[i]).tolist()),
                                  f["k"], f["fallback_cells"], mesh.fingerprint))
    return out


def synthesize_event(pools: PoolIndex, mesh: Mesh, estimator, seed, knn_rule: KnnRule = KnnRule(),
                     event_id: int = 0) -> SyntheticEvent:
    _check_inputs(pools, mesh, estimator)
    fields = _sample_fields(pools, mesh, seed, knn_rule)
    thr = getattr(estimator, "heavy_threshold", HEAVY_THRESHOLD_IN)
    return _finish([fields], [seed], [event_id], mesh, estimator, thr, 1)[0]


def generate_batch(pools: PoolIndex, mesh: Mesh, estimator, n: int, base_seed: int = 0,
                   knn_rule: KnnRule = KnnRule(), workers: int = 1, chunk: int = 256) -> list[SyntheticEvent]:
    """``n`` events; event ``i`` uses seed ``(base_seed, i)`` whatever the worker count."""
    if n < 1:
        raise DataError("n must be >= 1")
    _check_inputs(pools, mesh, estimator)
    thr = getattr(estimator, "heavy_threshold", HEAVY_THRESHOLD_IN)
    events: list[SyntheticEvent] = []
    for start in range(0, n, chunk):
        ids = list(range(start, min(n, start + chunk)))
        seeds = [(base_seed, i) for i in ids]

        def one(i, s):
            try:
                return _sample_fields(pools, mesh, s, knn_rule)
            except Exception as exc:
                raise type(exc)(f"event {i}: {exc}") from exc

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                fields = list(ex.map(one, ids, seeds))
        else:
            fields = [one(i, s) for i, s in zip(ids, seeds)]
        events.extend(_finish(fields, seeds, ids, mesh, estimator, thr, workers))
    return events


EVENT_FILE_HEADER = ("cell_id", "cumulative_in", "peak_in", "duration_h", "depth_ft")


def write_batch(path, events: Sequence[SyntheticEvent], extra: dict | None = None) -> None:
    """One CSV per event plus ``manifest.json``; replaces ``path`` atomically."""
    with atomic_dir(path) as tmp:
        for e in events:
            with open(tmp / f"event_{e.event_id:06d}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(EVENT_FILE_HEADER)
                for c in range(len(e.depth)):
                    w.writerow([c, repr(float(e.cumulative[c])), repr(float(e.peak[c])), repr(e.duration),
                                repr(float(e.depth[c]))])
        manifest = {
            **(extra or {}),
            "n_events": len(events),
            "events": [{"event_id": e.event_id, "seed": list(e.seed), "k": e.k, "duration_h": e.duration,
                        "duration_class": e.duration_class, "fallback_cells": e.fallback_cells}
                       for e in events],
            "fallback_total": int(sum(e.fallback_cells for e in events)),
        }
        (tmp / "manifest.json").write_text(dumps(manifest))


def read_batch(path, n_cells: int | None = None) -> list[StormEvent]:
    """Synthetic events written by :func:`write_batch`, as StormEvents with depths."""
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    out = []
    for rec in manifest["events"]:
        data = np.loadtxt(path / f"event_{rec['event_id']:06d}.csv", delimiter=",", skiprows=1, ndmin=2)
        if n_cells is not None and len(data) != n_cells:
            raise DataError(f"event {rec['event_id']} has {len(data)} cells, expected {n_cells}")
        out.append(StormEvent(rec["event_id"], data[:, 1], data[:, 2], float(data[0, 3]), data[:, 4]))
    return out
