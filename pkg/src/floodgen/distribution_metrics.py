"""Comparison of per-cell synthetic depth distributions against training depths."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConstantVector,
    EmptyPartition,
    EmptySample,
    LengthMismatch,
    SynthSmallerThanTrain,
    ZeroVector,
)
from .mesh import Mesh

METRICS = ("rmse", "cosine", "pearson", "kl")
STAT_COLUMNS = ("count", "mean", "std", "min", "q25", "q50", "q75", "max")


def resample_interp(ds, m: int) -> np.ndarray:
    """Linearly resample ``ds`` (length n) to length ``m``, keeping both endpoints."""
    ds = np.asarray(ds, dtype=float).ravel()
    n = len(ds)
    if n == 0 or m < 1:
        raise EmptySample("resampling needs n >= 1 and m >= 1")
    if m == 1:
        return ds[:1].copy()
    if n == m:
        return ds.copy()
    pos = np.arange(m) / (m - 1) * (n - 1)  # zero-based position in ds
    out = np.interp(pos, np.arange(n), ds)
    out[0], out[-1] = ds[0], ds[-1]
    return out


def cosine_sim(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pearson(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ConstantVector("correlation needs at least two values")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = np.dot(da, da), np.dot(db, db)
    if saa == 0 or sbb == 0:
        raise ConstantVector("correlation of a constant vector is undefined")
    return float(np.clip(np.dot(da, db) / np.sqrt(saa * sbb), -1.0, 1.0))


def kl_divergence(dt, ds, eps: float = 1e-10) -> float:
    """KL(p || q) of the eps-smoothed, sum-normalised vectors, natural log."""
    dt = np.asarray(dt, float)
    ds = np.asarray(ds, float)
    if dt.shape != ds.shape:
        raise LengthMismatch(f"{dt.shape} vs {ds.shape}")
    if np.any(dt < 0) or np.any(ds < 0):
        raise ValueError("depth vectors must be non-negative")
    p = (dt + eps) / np.sum(dt + eps)
    q = (ds + eps) / np.sum(ds + eps)
    nz = p > 0
    return float(max(np.sum(p[nz] * np.log(p[nz] / q[nz])), 0.0))


@dataclass
class CellComparison:
    cell_id: int
    rmse: float
    cosine: float
    pearson: float
    kl: float
    undefined: dict

    def get(self, metric: str) -> float:
        return getattr(self, metric)


def compare_cell(train_depths, synth_depths, repeats: int = 50, seed=0, cell_id: int = -1,
                 sort: bool = True) -> CellComparison:
    """Mean metrics over ``repeats`` downsamplings of the synthetic depths.

    With ``sort`` both vectors are compared as sorted quantile vectors;
    ``sort=False`` compares them in the order given. Undefined cosine or
    Pearson values are left out of the mean and counted; a metric that is
    undefined in every repeat is NaN.
    """
    t = np.asarray(train_depths, float).ravel()
    s = np.asarray(synth_depths, float).ravel()
    if len(t) == 0 or len(s) == 0:
        raise EmptySample("depth distributions must be non-empty")
    if len(s) < len(t):
        raise SynthSmallerThanTrain(f"{len(s)} synthetic < {len(t)} training depths")
    rng = np.random.default_rng(seed)
    tv = np.sort(t) if sort else t
    vals = {m: [] for m in METRICS}
    undefined = {"cosine": 0, "pearson": 0}
    for _ in range(repeats):
        pick = rng.choice(len(s), size=len(t), replace=False)
        sv = s[np.sort(pick)]
        if sort:
            sv = np.sort(sv)
        if len(sv) != len(tv):
            sv = resample_interp(sv, len(tv))
        vals["rmse"].append(float(np.sqrt(np.mean((tv - sv) ** 2))))
        vals["kl"].append(kl_divergence(tv, sv))
        try:
            vals["cosine"].append(cosine_sim(tv, sv))
        except ZeroVector:
            undefined["cosine"] += 1
        try:
            vals["pearson"].append(pearson(tv, sv))
        except ConstantVector:
            undefined["pearson"] += 1
    mean = {m: float(np.mean(v)) if v else float("nan") for m, v in vals.items()}
    return CellComparison(cell_id, mean["rmse"], mean["cosine"], mean["pearson"], mean["kl"], undefined)


def compare_all(train: np.ndarray, synth: np.ndarray, repeats: int = 50, seed: int = 0,
                sort: bool = True) -> list[CellComparison]:
    """``train`` is (n_train_events, n_cells), ``synth`` (n_synth_events, n_cells)."""
    train = np.asarray(train, float)
    synth = np.asarray(synth, float)
    return [compare_cell(train[:, c], synth[:, c], repeats, (seed, c), c, sort) for c in range(train.shape[1])]


def describe(values) -> dict:
    """count, mean, std (n-1, 0 for a single value), min, quartiles, max; NaNs dropped."""
    v = np.asarray(values, float)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        raise EmptyPartition("no defined values")
    q = np.percentile(v, [25, 50, 75])
    return {"count": int(len(v)), "mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "min": float(v.min()), "q25": float(q[0]), "q50": float(q[1]), "q75": float(q[2]),
            "max": float(v.max())}


def aggregate_report(comparisons: Sequence[CellComparison], mesh: Mesh) -> dict:
    """{partition: {metric: stats}} over overall, channel and non-channel cells."""
    by_cell = {c.cell_id: c for c in comparisons}
    if sorted(by_cell) != list(range(mesh.n_cells)):
        raise EmptyPartition("need exactly one comparison per cell")
    report = {}
    for name, cells in (("overall", np.arange(mesh.n_cells)),
                        ("channel", np.flatnonzero(mesh.channel == 1)),
                        ("non_channel", np.flatnonzero(mesh.channel == 0))):
        if len(cells) == 0:
            raise EmptyPartition(f"partition {name!r} has no cells")
        report[name] = {}
        for m in METRICS:
            vals = [by_cell[c].get(m) for c in cells]
            try:
                report[name][m] = describe(vals)
            except EmptyPartition:
                report[name][m] = {k: (0 if k == "count" else float("nan")) for k in STAT_COLUMNS}
    return report


def write_report_csv(path, report: dict) -> None:
    from .store import atomic_write

    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("partition", "metric") + STAT_COLUMNS)
        for part, metrics in report.items():
            for m, stats in metrics.items():
                w.writerow([part, m] + [stats[k] if k == "count" else repr(stats[k]) for k in STAT_COLUMNS])

    atomic_write(path, body)
