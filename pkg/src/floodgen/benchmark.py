"""Synthetic precipitation-flood benchmark with a known per-cell depth response.

Stands in for hydraulic-model output. Each cell has its own onset and
response coefficients, and channel cells also respond to how much of the
upstream watershed received heavy rainfall, so a single model over
(cumulative, peak, duration, channel, elevation) cannot represent it while
one model per cell over the watershed-ratio features can.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, StormEvent, depth_class
from .precip_features import HEAVY_THRESHOLD_IN, watershed_ratios


@dataclass
class BenchmarkTruth:
    slope: np.ndarray
    onset: np.ndarray
    upstream_gain: np.ndarray
    upstream: np.ndarray


def benchmark_mesh(nx: int = 20, ny: int = 10, n_watersheds: int = 3, seed: int = 0) -> Mesh:
    rng = np.random.default_rng(seed)
    cols = np.tile(np.arange(nx), ny)
    rows = np.repeat(np.arange(ny), nx)
    watershed = np.minimum(cols * n_watersheds // nx, n_watersheds - 1)
    river = np.round(ny / 2 + (ny / 4) * np.sin(cols / nx * 2 * np.pi)).astype(int)
    channel = (rows == np.clip(river, 0, ny - 1)).astype(int)
    elevation = 50.0 + 2.0 * cols + 1.5 * np.abs(rows - river) + rng.normal(0, 0.5, nx * ny)
    return Mesh.regular_grid(nx, ny, watershed, channel, elevation, watershed_count=n_watersheds)


def benchmark_truth(mesh: Mesh, seed: int = 0) -> BenchmarkTruth:
    rng = np.random.default_rng([seed, 1])
    n = mesh.n_cells
    slope = rng.uniform(0.02, 0.30, n)
    onset = rng.uniform(0.5, 4.0, n)
    # only channel cells respond to upstream rainfall
    gain = rng.uniform(0.4, 1.6, n) * mesh.channel
    upstream = np.maximum(mesh.watershed - 1, 0)
    return BenchmarkTruth(slope, onset, gain, upstream)


def benchmark_depth(mesh: Mesh, truth: BenchmarkTruth, cumulative, peak) -> np.ndarray:
    hcpr = watershed_ratios(mesh, cumulative, HEAVY_THRESHOLD_IN)
    hppr = watershed_ratios(mesh, peak, HEAVY_THRESHOLD_IN)
    upstream = 0.7 * hcpr[..., truth.upstream] + 0.3 * hppr[..., truth.upstream]
    return truth.slope * np.maximum(cumulative - truth.onset, 0.0) + truth.upstream_gain * upstream


def _storm(mesh: Mesh, rng: np.random.Generator, magnitude: float):
    x, y = mesh.xy[:, 0], mesh.xy[:, 1]
    cx = rng.uniform(x.min(), x.max())
    cy = rng.uniform(y.min(), y.max())
    radius = rng.uniform(0.2, 0.8) * max(np.ptp(x), np.ptp(y), 1.0)
    shape = 0.25 + 0.75 * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * radius ** 2))
    cumulative = magnitude * shape * rng.uniform(0.9, 1.1, mesh.n_cells)
    duration = float(rng.integers(1, 37))
    frac = 1.0 / duration + (1.0 - 1.0 / duration) * rng.uniform(0.25, 0.75)
    if duration == 1.0:
        frac = 0.9
    peak = cumulative * np.clip(frac * rng.uniform(0.95, 1.05, mesh.n_cells), 1.0 / duration + 1e-3, 0.99)
    return cumulative, peak, duration


def benchmark_events(mesh: Mesh, truth: BenchmarkTruth, n_events: int = 90, seed: int = 0,
                     class_quota=(30, 45, 15), noise_ft: float = 0.02, max_tries: int = 200_000) -> list[StormEvent]:
    """Events whose mean-depth classes follow ``class_quota`` (scaled to ``n_events``)."""
    rng = np.random.default_rng([seed, 2])
    quota = np.asarray(class_quota, float)
    quota = np.floor(quota / quota.sum() * n_events + 0.5).astype(int)
    quota[1] += n_events - quota.sum()
    have = np.zeros(3, int)
    events: list[StormEvent] = []
    for _ in range(max_tries):
        if len(events) == n_events:
            break
        magnitude = rng.uniform(0.3, 14.0)
        cum, peak, dur = _storm(mesh, rng, magnitude)
        depth = benchmark_depth(mesh, truth, cum, peak)
        depth = np.maximum(depth + rng.normal(0.0, noise_ft, mesh.n_cells), 0.0)
        k = depth_class(float(depth.mean()))
        if have[k] >= quota[k]:
            continue
        have[k] += 1
        events.append(StormEvent(len(events), cum, peak, dur, depth))
    if len(events) < n_events:
        raise RuntimeError(f"could only build {len(events)} benchmark events")
    return events


def make_benchmark(nx: int = 20, ny: int = 10, n_watersheds: int = 3, n_events: int = 90, seed: int = 0):
    """(mesh, events, truth) for a small synthetic study area."""
    mesh = benchmark_mesh(nx, ny, n_watersheds, seed)
    truth = benchmark_truth(mesh, seed)
    return mesh, benchmark_events(mesh, truth, n_events, seed), truth
