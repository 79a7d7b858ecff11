"""Gradient-boosted regression trees and the cell-wise / universal depth estimators."""
from __future__ import annotations

import json
import math
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    CorruptStore,
    DataError,
    DegenerateVariance,
    EmptyTrainingSet,
    FeatureLengthMismatch,
    InconsistentFeatureLength,
    MeshFingerprintMismatch,
    MissingDepths,
)
from .mesh import Mesh, StormEvent
from .precip_features import HEAVY_THRESHOLD_IN, cellwise_matrix, feature_names, universal_matrix
from .store import atomic_dir, load_sealed, seal, sha256_bytes, dumps

log = logging.getLogger(__name__)

_MAGIC = b"GBT1"


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 1000
    max_depth: int = 5
    learning_rate: float = 0.01
    subsample: float = 0.3
    l1_alpha: float = 0.01
    l2_lambda: float = 1.0
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ConfigError("subsample must lie in (0, 1]")
        if self.l1_alpha < 0 or self.l2_lambda < 0:
            raise ConfigError("regularization strengths must be >= 0")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")


@dataclass
class GbtModel:
    """Boosted trees stored as flat preorder node arrays; ``roots`` index tree starts."""

    base_score: float
    learning_rate: float
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def tree_depths(self) -> list[int]:
        depths = []
        for root in self.roots:
            best, stack = 0, [(int(root), 0)]
            while stack:
                node, d = stack.pop()
                if self.feature[node] < 0:
                    best = max(best, d)
                else:
                    stack += [(int(self.left[node]), d + 1), (int(self.right[node]), d + 1)]
            depths.append(best)
        return depths

    def predict_raw(self, X, backend: str | None = None) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != self.n_features:
            raise FeatureLengthMismatch(f"rows have {X.shape[1]} features, model expects {self.n_features}")
        k = kernels.get(backend)
        return np.asarray(k.predict_forest(X, self.feature, self.threshold, self.left, self.right,
                                           self.value, self.roots, self.learning_rate, self.base_score))

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "base_score": self.base_score.hex(),
            "learning_rate": float(self.learning_rate).hex(),
            "n_features": self.n_features,
            "n_nodes": int(len(self.feature)),
            "n_trees": int(len(self.roots)),
        }, sort_keys=True).encode()
        parts = [_MAGIC, struct.pack("<I", len(header)), header]
        for arr, dt in ((self.feature, "<i8"), (self.threshold, "<f8"), (self.left, "<i8"),
                        (self.right, "<i8"), (self.value, "<f8"), (self.roots, "<i8")):
            parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GbtModel":
        if data[:4] != _MAGIC:
            raise CorruptStore("not a tree file")
        try:
            (hlen,) = struct.unpack("<I", data[4:8])
            h = json.loads(data[8:8 + hlen])
            off = 8 + hlen
            nn, nt = h["n_nodes"], h["n_trees"]
            arrays = []
            for count, dt in ((nn, "<i8"), (nn, "<f8"), (nn, "<i8"), (nn, "<i8"), (nn, "<f8"), (nt, "<i8")):
                arrays.append(np.frombuffer(data, dtype=dt, count=count, offset=off).astype(dt[1:]))
                off += 8 * count
        except (ValueError, KeyError, struct.error) as exc:
            raise CorruptStore(f"malformed tree file: {exc}") from exc
        if off != len(data):
            raise CorruptStore("trailing bytes in tree file")
        return cls(float.fromhex(h["base_score"]), float.fromhex(h["learning_rate"]), h["n_features"], *arrays)


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def fit_gbt(rows, targets, config: GbtConfig = GbtConfig(), backend: str | None = None) -> GbtModel:
    try:
        X = np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise InconsistentFeatureLength(f"rows differ in length: {exc}") from exc
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.size == 0 or len(y) == 0:
        raise EmptyTrainingSet("no training rows")
    if X.ndim != 2:
        raise InconsistentFeatureLength("rows must all have the same length")
    if len(y) != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {len(y)} targets")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("training data must be finite")
    X = np.ascontiguousarray(X)
    k = kernels.get(backend)
    n, p = X.shape
    base = math.fsum(y) / n  # exactly rounded, so row order cannot change it
    F = np.full(n, base)
    presort = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    rng = np.random.default_rng(config.seed)
    m = min(n, max(1, _half_up(config.subsample * n)))
    one = np.zeros(1, dtype=np.int64)
    feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
    offset = 0
    for _ in range(config.n_trees):
        if m < n:
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=m, replace=False)] = True
            order = np.ascontiguousarray(presort[mask[presort]].reshape(p, m))
        else:
            order = presort.copy()
        r = y - F
        f, t, lft, rgt, v = k.build_tree(X, r, order, config.max_depth, config.min_leaf,
                                         config.l1_alpha, config.l2_lambda)
        step = np.asarray(k.predict_forest(X, f, t, lft, rgt, v, one, 1.0, 0.0))
        F = F + config.learning_rate * step
        feats.append(f)
        thrs.append(t)
        lefts.append(np.where(lft >= 0, lft + offset, -1))
        rights.append(np.where(rgt >= 0, rgt + offset, -1))
        vals.append(v)
        roots.append(offset)
        offset += len(f)
    return GbtModel(base, float(config.learning_rate), p, np.concatenate(feats), np.concatenate(thrs),
                    np.concatenate(lefts), np.concatenate(rights), np.concatenate(vals),
                    np.asarray(roots, dtype=np.int64))


def predict(model: GbtModel, row, backend: str | None = None):
    """Depth in feet, clamped at zero. A single row gives a float, a matrix an array."""
    arr = np.asarray(row, dtype=np.float64)
    out = np.maximum(model.predict_raw(arr, backend), 0.0)
    return float(out[0]) if arr.ndim == 1 else out


# estimators -----------------------------------------------------------------


@dataclass
class CellwiseEstimator:
    models: list[GbtModel]
    feature_names: list[str]
    mesh_fingerprint: str
    config: GbtConfig
    heavy_threshold: float = HEAVY_THRESHOLD_IN
    mode: str = field(default="cellwise", init=False)

    def features(self, mesh: Mesh, cumulative, peak, duration) -> np.ndarray:
        return cellwise_matrix(mesh, cumulative, peak, duration, self.heavy_threshold)

    def predict_matrix(self, X: np.ndarray, workers: int = 1) -> np.ndarray:
        """X has shape (n_events, n_cells, n_features); returns (n_events, n_cells) depths."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.models):
            raise FeatureLengthMismatch(f"{X.shape[1]} cells but {len(self.models)} models")
        out = np.empty(X.shape[:2])

        def run(c):
            out[:, c] = np.maximum(self.models[c].predict_raw(np.ascontiguousarray(X[:, c, :])), 0.0)

        _parallel_for(run, range(len(self.models)), workers)
        return out

    def predict_events(self, mesh: Mesh, events: Sequence[StormEvent], workers: int = 1) -> np.ndarray:
        _check_mesh(mesh, self.mesh_fingerprint)
        cum, peak, dur = _stack(events)
        return self.predict_matrix(self.features(mesh, cum, peak, dur), workers)


@dataclass
class UniversalEstimator:
    model: GbtModel
    feature_names: list[str]
    mesh_fingerprint: str
    config: GbtConfig
    mode: str = field(default="universal", init=False)

    @property
    def models(self) -> list[GbtModel]:
        return [self.model]

    def features(self, mesh: Mesh, cumulative, peak, duration) -> np.ndarray:
        return universal_matrix(mesh, cumulative, peak, duration)

    def predict_matrix(self, X: np.ndarray, workers: int = 1) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        E, n, p = X.shape
        flat = np.ascontiguousarray(X.reshape(E * n, p))
        return np.maximum(self.model.predict_raw(flat), 0.0).reshape(E, n)

    def predict_events(self, mesh: Mesh, events: Sequence[StormEvent], workers: int = 1) -> np.ndarray:
        _check_mesh(mesh, self.mesh_fingerprint)
        cum, peak, dur = _stack(events)
        return self.predict_matrix(self.features(mesh, cum, peak, dur), workers)


def _parallel_for(fn, items, workers: int) -> None:
    items = list(items)
    if workers <= 1:
        for it in items:
            fn(it)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _ in pool.map(fn, items):
            pass


def _check_mesh(mesh: Mesh, fingerprint: str) -> None:
    if mesh.fingerprint != fingerprint:
        raise MeshFingerprintMismatch(f"mesh {mesh.fingerprint[:12]} != estimator mesh {fingerprint[:12]}")


def _stack(events: Sequence[StormEvent]):
    cum = np.stack([e.cumulative for e in events])
    peak = np.stack([e.peak for e in events])
    dur = np.array([e.duration for e in events])
    return cum, peak, dur


def _depths(events: Sequence[StormEvent]) -> np.ndarray:
    if not events:
        raise EmptyTrainingSet("no training events")
    if any(e.depth is None for e in events):
        raise MissingDepths("training events need depths")
    return np.stack([e.depth for e in events])


def train_cellwise(mesh: Mesh, train_events: Sequence[StormEvent], config: GbtConfig = GbtConfig(),
                   workers: int = 1, heavy_threshold: float = HEAVY_THRESHOLD_IN,
                   backend: str | None = None) -> CellwiseEstimator:
    y = _depths(train_events)
    cum, peak, dur = _stack(train_events)
    X = cellwise_matrix(mesh, cum, peak, dur, heavy_threshold)
    models: list[GbtModel | None] = [None] * mesh.n_cells

    def run(c):
        try:
            models[c] = fit_gbt(X[:, c, :], y[:, c], config, backend)
        except DataError as exc:
            raise type(exc)(f"cell {c}: {exc}") from exc

    _parallel_for(run, range(mesh.n_cells), workers)
    return CellwiseEstimator(models, feature_names("cellwise", mesh.watershed_count), mesh.fingerprint,
                             config, heavy_threshold)


def train_universal(mesh: Mesh, train_events: Sequence[StormEvent], config: GbtConfig = GbtConfig(),
                    backend: str | None = None) -> UniversalEstimator:
    y = _depths(train_events)
    cum, peak, dur = _stack(train_events)
    X = universal_matrix(mesh, cum, peak, dur)
    E, n, p = X.shape
    model = fit_gbt(X.reshape(E * n, p), y.reshape(E * n), config, backend)
    return UniversalEstimator(model, feature_names("universal", mesh.watershed_count), mesh.fingerprint, config)


# evaluation -----------------------------------------------------------------


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, float).ravel()
    truth = np.asarray(truth, float).ravel()
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def r2_score(pred, truth) -> float:
    pred = np.asarray(pred, float).ravel()
    truth = np.asarray(truth, float).ravel()
    sst = float(np.sum((truth - truth.mean()) ** 2))
    if sst == 0.0:
        raise DegenerateVariance("truths are constant; R^2 undefined")
    return 1.0 - float(np.sum((pred - truth) ** 2)) / sst


@dataclass
class EvalReport:
    partitions: dict[str, dict[str, float | int | None]]
    predict_seconds: float = 0.0

    def rmse(self, part: str = "overall") -> float:
        return self.partitions[part]["rmse"]

    def r2(self, part: str = "overall"):
        return self.partitions[part]["r2"]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predictions, truths, mesh: Mesh, predict_seconds: float = 0.0) -> EvalReport:
    """RMSE and R^2 over overall, channel and non-channel cells.

    ``predictions``/``truths`` are (n_events, n_cells). Undefined R^2 is None.
    """
    P = np.atleast_2d(np.asarray(predictions, float))
    T = np.atleast_2d(np.asarray(truths, float))
    if P.shape != T.shape or P.shape[1] != mesh.n_cells:
        raise DataError(f"prediction shape {P.shape} vs truth shape {T.shape}")
    parts = {}
    for name, sel in (("overall", np.ones(mesh.n_cells, bool)),
                      ("channel", mesh.channel == 1),
                      ("non_channel", mesh.channel == 0)):
        if not sel.any():
            parts[name] = {"n": 0, "rmse": None, "r2": None}
            continue
        p, t = P[:, sel], T[:, sel]
        try:
            r2 = r2_score(p, t)
        except DegenerateVariance:
            r2 = None
        parts[name] = {"n": int(p.size), "rmse": rmse(p, t), "r2": r2}
    return EvalReport(parts, predict_seconds)


def evaluate_estimator(estimator, mesh: Mesh, events: Sequence[StormEvent], workers: int = 1) -> EvalReport:
    t0 = time.perf_counter()
    pred = estimator.predict_events(mesh, events, workers)
    elapsed = time.perf_counter() - t0
    return evaluate(pred, _depths(events), mesh, elapsed)


# persistence ----------------------------------------------------------------

STORE_VERSION = 1


def save_estimator(path, estimator) -> None:
    """Write ``manifest.json`` plus one tree file per model, atomically."""
    with atomic_dir(path) as tmp:
        (tmp / "models").mkdir()
        files = {}
        for i, model in enumerate(estimator.models):
            name = f"models/{'universal' if estimator.mode == 'universal' else f'cell_{i:06d}'}.gbt"
            data = model.to_bytes()
            (tmp / name).write_bytes(data)
            files[name] = sha256_bytes(data)
        manifest = seal({
            "format_version": STORE_VERSION,
            "mode": estimator.mode,
            "feature_names": list(estimator.feature_names),
            "config": asdict(estimator.config),
            "mesh_fingerprint": estimator.mesh_fingerprint,
            "heavy_threshold_in": getattr(estimator, "heavy_threshold", HEAVY_THRESHOLD_IN),
            "n_models": len(estimator.models),
            "files": files,
        })
        (tmp / "manifest.json").write_text(dumps(manifest))


def load_estimator(path, mesh: Mesh | None = None):
    path = Path(path)
    manifest = load_sealed(path / "manifest.json")
    if manifest.get("format_version") != STORE_VERSION:
        raise CorruptStore(f"unsupported store version {manifest.get('format_version')}")
    models = []
    for name in sorted(manifest["files"]):
        try:
            data = (path / name).read_bytes()
        except OSError as exc:
            raise CorruptStore(f"missing model file {name}") from exc
        if sha256_bytes(data) != manifest["files"][name]:
            raise CorruptStore(f"model file {name} does not match manifest")
        models.append(GbtModel.from_bytes(data))
    if len(models) != manifest["n_models"]:
        raise CorruptStore("model count disagrees with manifest")
    for m in models:
        if m.n_features != len(manifest["feature_names"]):
            raise CorruptStore("feature ordering disagrees with model files")
    if mesh is not None:
        _check_mesh(mesh, manifest["mesh_fingerprint"])
    config = GbtConfig(**manifest["config"])
    if manifest["mode"] == "universal":
        return UniversalEstimator(models[0], manifest["feature_names"], manifest["mesh_fingerprint"], config)
    if mesh is not None and len(models) != mesh.n_cells:
        raise MeshFingerprintMismatch("model count differs from mesh cell count")
    return CellwiseEstimator(models, manifest["feature_names"], manifest["mesh_fingerprint"], config,
                             manifest.get("heavy_threshold_in", HEAVY_THRESHOLD_IN))
