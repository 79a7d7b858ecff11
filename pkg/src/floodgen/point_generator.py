"""Synthetic precipitation point clouds.

A generative backend is fitted to (lat, lon, cumulative, peak, duration)
records; sampling rejects records that violate the physical constraints.
The reference backend is a Gaussian copula over empirical marginals.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import stats

from .errors import AcceptanceRateTooLow, ConfigError, DataError, EmptySample, TooFewRecords
from .mesh import Mesh, StormEvent

log = logging.getLogger(__name__)

COLUMNS = ("lat", "lon", "cumulative", "peak", "duration")
CSV_HEADER = ("lat", "lon", "cumulative_in", "peak_in", "duration_h")
SCORED_FEATURES = ("cumulative", "peak", "duration")
_COL = {name: i for i, name in enumerate(COLUMNS)}

CHUNK_DRAWS = 1 << 15


class PointRecords:
    """Columnar point records; ``data`` has shape (n, 5) ordered as ``COLUMNS``."""

    def __init__(self, data):
        data = np.asarray(data, dtype=float)
        if data.size == 0:
            data = np.empty((0, 5))
        if data.ndim != 2 or data.shape[1] != 5:
            raise DataError("point records must have 5 columns")
        self.data = data

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.data[:, _COL[key]]
        return PointRecords(self.data[key])

    def column(self, name: str) -> np.ndarray:
        return self.data[:, _COL[name]]

    @classmethod
    def from_events(cls, mesh: Mesh, events: Sequence[StormEvent]) -> "PointRecords":
        """One record per (event, cell), located at the cell centroid."""
        rows = []
        for e in events:
            rows.append(np.column_stack([mesh.lat, mesh.lon, e.cumulative, e.peak,
                                         np.full(mesh.n_cells, e.duration)]))
        return cls(np.vstack(rows) if rows else np.empty((0, 5)))

    def to_csv(self, path) -> None:
        from .store import atomic_write

        def body(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in self.data:
                w.writerow([repr(float(v)) for v in row])

        atomic_write(path, body)

    @classmethod
    def from_csv(cls, path) -> "PointRecords":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"point-cloud header must be {','.join(CSV_HEADER)}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data)


def constraint_mask(data: np.ndarray, mesh: Mesh | None, allow_dry: bool = False) -> np.ndarray:
    """True where a record satisfies all four point constraints."""
    lat, lon, cum, peak, dur = (data[:, i] for i in range(5))
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (dur >= 1.0) & (cum > peak) & (peak > cum / dur)
    if allow_dry:
        ok |= (dur >= 1.0) & (cum == 0.0) & (peak == 0.0)
    if mesh is not None and ok.any():
        idx = np.flatnonzero(ok)
        ok[idx] = mesh.contains(lat[idx], lon[idx])
    return ok


# backends ---------------------------------------------------------------------


class GeneratorBackend(Protocol):
    name: str

    def fit(self, points: PointRecords) -> "GeneratorModel": ...


@dataclass(frozen=True)
class CopulaConfig:
    """Gaussian copula settings.

    ``marginal_jitter`` adds Gaussian noise (in units of each feature's std) to
    the stored marginals; ``correlation_shrinkage`` pulls the latent
    correlation toward the identity. Both default to off.
    """

    marginal_jitter: float = 0.0
    correlation_shrinkage: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.marginal_jitter < 0:
            raise ConfigError("marginal_jitter must be >= 0")
        if not 0 <= self.correlation_shrinkage <= 1:
            raise ConfigError("correlation_shrinkage must lie in [0, 1]")


@dataclass
class GeneratorModel:
    marginals: list[np.ndarray]
    correlation: np.ndarray
    backend: str = "copula"
    degenerate: list[int] = field(default_factory=list)

    def __post_init__(self):
        self._factor = _latent_factor(self.correlation)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Unconstrained records, shape (n, 5)."""
        z = rng.standard_normal((n, len(self.marginals))) @ self._factor.T
        u = stats.norm.cdf(z)
        out = np.empty_like(u)
        for j, sv in enumerate(self.marginals):
            out[:, j] = inverse_ecdf(sv, u[:, j])
        return out

    def to_json(self) -> dict:
        return {
            "backend": self.backend,
            "columns": list(COLUMNS),
            "correlation": [[float(v).hex() for v in row] for row in self.correlation],
            "marginals": [[float(v).hex() for v in sv] for sv in self.marginals],
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GeneratorModel":
        if doc.get("backend") != "copula":
            raise DataError(f"unsupported generator backend {doc.get('backend')!r}")
        corr = np.array([[float.fromhex(v) for v in row] for row in doc["correlation"]])
        marg = [np.array([float.fromhex(v) for v in sv]) for sv in doc["marginals"]]
        return cls(marg, corr, "copula", list(doc.get("degenerate", [])))

    def save(self, path) -> None:
        from .store import atomic_write_json
        atomic_write_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def inverse_ecdf(sorted_values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear interpolation between order statistics placed at rank/(n+1); no extrapolation."""
    n = len(sorted_values)
    grid = np.arange(1, n + 1) / (n + 1)
    return np.interp(u, grid, sorted_values)


def normal_scores(x: np.ndarray) -> np.ndarray:
    n = len(x)
    return stats.norm.ppf(stats.rankdata(x, method="average") / (n + 1))


def nearest_psd_correlation(corr: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero, then rescale to unit diagonal."""
    corr = 0.5 * (corr + corr.T)
    w, V = np.linalg.eigh(corr)
    fixed = (V * np.clip(w, 0.0, None)) @ V.T
    d = np.sqrt(np.clip(np.diag(fixed), 1e-300, None))
    fixed = fixed / np.outer(d, d)
    fixed = np.clip(0.5 * (fixed + fixed.T), -1.0, 1.0)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _latent_factor(corr: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        # singular (e.g. duplicated features): symmetric square root instead
        w, V = np.linalg.eigh(corr)
        return V * np.sqrt(np.clip(w, 0.0, None))


class CopulaBackend:
    name = "copula"

    def __init__(self, config: CopulaConfig = CopulaConfig()):
        self.config = config

    def fit(self, points: PointRecords) -> GeneratorModel:
        data = points.data if isinstance(points, PointRecords) else np.asarray(points, float)
        if len(data) < 10:
            raise TooFewRecords(f"need at least 10 records, got {len(data)}")
        if not np.isfinite(data).all():
            raise DataError("records contain missing or non-finite values")
        p = data.shape[1]
        degenerate = [j for j in range(p) if np.ptp(data[:, j]) == 0]
        scores = np.column_stack([normal_scores(data[:, j]) for j in range(p)])
        live = [j for j in range(p) if j not in degenerate]
        corr = np.eye(p)
        if len(live) > 1:
            corr[np.ix_(live, live)] = np.corrcoef(scores[:, live], rowvar=False)
        corr = nearest_psd_correlation(corr)
        s = self.config.correlation_shrinkage
        if s > 0:
            corr = (1 - s) * corr + s * np.eye(p)
        marginals = []
        rng = np.random.default_rng(self.config.seed)
        for j in range(p):
            col = data[:, j].copy()
            if self.config.marginal_jitter > 0 and j not in degenerate:
                col = col + rng.normal(0.0, self.config.marginal_jitter * col.std(), len(col))
            marginals.append(np.sort(col))
        return GeneratorModel(marginals, corr, self.name, degenerate)


BACKENDS = {"copula": CopulaBackend}


def fit_generator(points: PointRecords, backend: str = "copula", config: CopulaConfig | None = None) -> GeneratorModel:
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise ConfigError(f"unknown generator backend {backend!r}") from None
    return cls(config or CopulaConfig()).fit(points)


def sample_constrained(model: GeneratorModel, n: int, mesh: Mesh | None, max_attempt_factor: float = 100,
                       seed: int = 0, allow_dry: bool = False) -> PointRecords:
    """Exactly ``n`` records satisfying every constraint, in draw-index order.

    Draws come in fixed-size chunks, chunk ``c`` using stream ``(seed, c)``, so
    the output for ``n`` is a prefix of the output for any larger ``n``.
    """
    if n < 0:
        raise DataError("n must be >= 0")
    if n == 0:
        return PointRecords(np.empty((0, 5)))
    budget = int(np.ceil(max_attempt_factor * n))
    accepted, total, drawn, chunk = [], 0, 0, 0
    while total < n and drawn < budget:
        size = min(CHUNK_DRAWS, budget - drawn)
        rng = np.random.default_rng([seed, chunk])
        block = model.draw(CHUNK_DRAWS, rng)[:size]
        ok = constraint_mask(block, mesh, allow_dry)
        accepted.append(block[ok])
        total += int(ok.sum())
        drawn += size
        chunk += 1
    if total < n:
        raise AcceptanceRateTooLow(f"accepted {total} of {n} records after {drawn} draws")
    out = np.vstack(accepted)[:n]
    log.debug("sample_constrained: %d accepted from %d draws", n, drawn)
    return PointRecords(out)


# quality ----------------------------------------------------------------------


def ks_statistic(a, b) -> float:
    """Two-sample KS statistic with right-continuous ECDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise EmptySample("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class QualityReport:
    ks: dict[str, float]
    score: float


def quality_score(train: PointRecords, synth: PointRecords, features: Sequence[str] = SCORED_FEATURES) -> QualityReport:
    if len(train) == 0 or len(synth) == 0:
        raise EmptySample("both datasets must be non-empty")
    ks = {f: ks_statistic(train.column(f), synth.column(f)) for f in features}
    return QualityReport(ks, sum(1.0 - k for k in ks.values()) / len(features))


def select_generator(train: PointRecords, candidate_configs: Sequence[CopulaConfig], sample_size: int,
                     seed: int = 0, mesh: Mesh | None = None, backend: str = "copula",
                     allow_dry: bool = False, max_attempt_factor: float = 100):
    """Fit every candidate, score a constrained sample of each, keep the best (first on ties)."""
    if not candidate_configs:
        raise ConfigError("at least one generator candidate is required")
    best, best_score, reports = None, -np.inf, []
    for cfg in candidate_configs:
        model = fit_generator(train, backend, cfg)
        synth = sample_constrained(model, sample_size, mesh, max_attempt_factor, seed, allow_dry)
        rep = quality_score(train, synth)
        reports.append((asdict(cfg), rep))
        if rep.score > best_score:
            best, best_score = model, rep.score
    return best, reports
