"""Study-area geometry, storm events and event splitting.

Coordinates are stored as (lat, lon) in degrees. All distance work happens in
an equirectangular projection about the mesh centroid, in feet.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint, Polygon, mapping, shape

from .errors import (
    DataError,
    InsufficientEvents,
    MissingDepths,
    PointOutsideStudyArea,
    StoreIOError,
)

log = logging.getLogger(__name__)

EARTH_RADIUS_FT = 6371008.8 * 3.280839895
FT_PER_INCH = 1.0 / 12.0


@dataclass(frozen=True)
class Cell:
    cell_id: int
    centroid: tuple[float, float]
    polygon: np.ndarray = field(repr=False)
    area: float
    watershed_id: int
    channel: int
    elevation: float


class Mesh:
    """Immutable collection of cells plus the study-area boundary."""

    def __init__(self, cells: Sequence[Cell], watershed_count: int | None = None,
                 boundary: Polygon | None = None):
        cells = sorted(cells, key=lambda c: c.cell_id)
        ids = np.array([c.cell_id for c in cells], dtype=np.int64)
        if len(cells) == 0:
            raise DataError("mesh has no cells")
        if not np.array_equal(ids, np.arange(len(cells))):
            raise DataError("cell_ids must be unique and dense in [0, n)")
        self.cells = tuple(cells)
        self.lat = np.array([c.centroid[0] for c in cells], dtype=float)
        self.lon = np.array([c.centroid[1] for c in cells], dtype=float)
        self.area = np.array([c.area for c in cells], dtype=float)
        self.watershed = np.array([c.watershed_id for c in cells], dtype=np.int64)
        self.channel = np.array([c.channel for c in cells], dtype=np.int64)
        self.elevation = np.array([c.elevation for c in cells], dtype=float)
        if np.any(self.area <= 0):
            raise DataError("cell areas must be positive")
        if not np.all(np.isin(self.channel, (0, 1))):
            raise DataError("channel flag must be 0 or 1")
        W = int(self.watershed.max()) + 1 if watershed_count is None else int(watershed_count)
        if self.watershed.min() < 0 or self.watershed.max() >= W:
            raise DataError(f"watershed ids must lie in [0, {W})")
        counts = np.bincount(self.watershed, minlength=W)
        if np.any(counts == 0):
            raise DataError(f"watersheds without cells: {np.flatnonzero(counts == 0).tolist()}")
        self.watershed_count = W
        self.watershed_area = np.bincount(self.watershed, weights=self.area, minlength=W)

        self.lat0 = float(self.lat.mean())
        self.lon0 = float(self.lon.mean())
        self._coslat0 = float(np.cos(np.radians(self.lat0)))
        x, y = self.project(self.lat, self.lon)
        self.xy = np.column_stack([x, y])
        self._tree = cKDTree(self.xy)

        if boundary is None:
            boundary = shapely.union_all([Polygon(c.polygon[:, ::-1]) for c in cells])
        self.boundary = boundary
        shapely.prepare(self.boundary)
        self.fingerprint = mesh_fingerprint(self.lat, self.lon)
        self._knn_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self) -> str:
        return f"Mesh(n_cells={len(self)}, watersheds={self.watershed_count})"

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def project(self, lat, lon):
        """Equirectangular projection about the mesh centroid, in feet."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = np.radians(lon - self.lon0) * self._coslat0 * EARTH_RADIUS_FT
        y = np.radians(lat - self.lat0) * EARTH_RADIUS_FT
        return x, y

    def unproject(self, x, y):
        lat = np.degrees(np.asarray(y, dtype=float) / EARTH_RADIUS_FT) + self.lat0
        lon = np.degrees(np.asarray(x, dtype=float) / (EARTH_RADIUS_FT * self._coslat0)) + self.lon0
        return lat, lon

    def contains(self, lat, lon) -> np.ndarray:
        """Vectorised membership test; boundary points count as inside."""
        return shapely.intersects_xy(self.boundary, np.asarray(lon, float), np.asarray(lat, float))

    def nearest_cells(self, lat, lon) -> np.ndarray:
        """Nearest-centroid cell for each point, ties to the smallest cell_id.

        No containment check; use :meth:`assign` for that.
        """
        x, y = self.project(np.atleast_1d(lat), np.atleast_1d(lon))
        k = min(8, self.n_cells)
        _, idx = self._tree.query(np.column_stack([x, y]), k=k)
        idx = idx.reshape(len(x), k)
        # exact squared distances so equal distances compare equal
        dx = self.xy[idx, 0] - x[:, None]
        dy = self.xy[idx, 1] - y[:, None]
        d2 = dx * dx + dy * dy
        best = d2.min(axis=1, keepdims=True)
        cand = np.where(d2 == best, idx, np.iinfo(np.int64).max)
        return cand.min(axis=1).astype(np.int64)

    def assign(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Return (cell ids, inside mask); ids of outside points are -1."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        inside = self.contains(lat, lon)
        ids = np.full(len(lat), -1, dtype=np.int64)
        if inside.any():
            ids[inside] = self.nearest_cells(lat[inside], lon[inside])
        return ids, inside

    def knn_indices(self, k: int) -> np.ndarray:
        """(n_cells, k) neighbour table, self first, ties by smaller cell_id."""
        k = int(k)
        if k in self._knn_cache:
            return self._knn_cache[k]
        n = self.n_cells
        if k >= n:
            table = np.empty((n, n), dtype=np.int64)
            for i in range(n):
                table[i] = _ordered_neighbours(self.xy, i, np.arange(n))[:n]
        else:
            dist, _ = self._tree.query(self.xy, k=k)
            radius = dist.reshape(n, k)[:, -1]
            table = np.empty((n, k), dtype=np.int64)
            for i in range(n):
                cand = np.asarray(self._tree.query_ball_point(self.xy[i], radius[i] * (1 + 1e-9) + 1e-9))
                order = _ordered_neighbours(self.xy, i, cand)
                if len(order) < k:  # pathological rounding, fall back to brute force
                    order = _ordered_neighbours(self.xy, i, np.arange(n))
                table[i] = order[:k]
        table.setflags(write=False)
        self._knn_cache[k] = table
        return table

    # construction --------------------------------------------------------

    @classmethod
    def from_centroids(cls, lat, lon, region: Polygon, watershed_ids, channel=None,
                       elevation=None, watershed_count: int | None = None) -> "Mesh":
        """Voronoi cells of the centroids clipped to ``region`` (lon/lat polygon)."""
        lat = np.asarray(lat, float)
        lon = np.asarray(lon, float)
        n = len(lat)
        channel = np.zeros(n, int) if channel is None else np.asarray(channel, int)
        elevation = np.zeros(n) if elevation is None else np.asarray(elevation, float)
        lat0, lon0 = float(lat.mean()), float(lon.mean())
        coslat0 = float(np.cos(np.radians(lat0)))

        def fwd(la, lo):
            return (np.radians(np.asarray(lo) - lon0) * coslat0 * EARTH_RADIUS_FT,
                    np.radians(np.asarray(la) - lat0) * EARTH_RADIUS_FT)

        def inv(x, y):
            return (np.degrees(np.asarray(y) / EARTH_RADIUS_FT) + lat0,
                    np.degrees(np.asarray(x) / (EARTH_RADIUS_FT * coslat0)) + lon0)

        rx, ry = fwd(np.asarray(region.exterior.coords)[:, 1], np.asarray(region.exterior.coords)[:, 0])
        region_xy = Polygon(np.column_stack([rx, ry]))
        px, py = fwd(lat, lon)
        pts = MultiPoint(np.column_stack([px, py]))
        cells_xy = shapely.voronoi_polygons(pts, extend_to=region_xy, ordered=True)
        cells = []
        for i, poly in enumerate(cells_xy.geoms):
            clipped = poly.intersection(region_xy)
            if clipped.geom_type != "Polygon":
                clipped = max(getattr(clipped, "geoms", [clipped]), key=lambda g: g.area)
            ring = np.asarray(clipped.exterior.coords)
            vlat, vlon = inv(ring[:, 0], ring[:, 1])
            cells.append(Cell(i, (float(lat[i]), float(lon[i])), np.column_stack([vlat, vlon]),
                              float(clipped.area), int(watershed_ids[i]), int(channel[i]),
                              float(elevation[i])))
        return cls(cells, watershed_count, boundary=region)

    @classmethod
    def regular_grid(cls, nx: int, ny: int, watershed_ids=None, channel=None, elevation=None,
                     origin=(29.75, -95.40), spacing_deg=0.01,
                     watershed_count: int | None = None) -> "Mesh":
        """Rectangular cells on a lat/lon lattice; cell_id = row * nx + col."""
        n = nx * ny
        lat0, lon0 = origin
        cells = []
        wid = np.zeros(n, int) if watershed_ids is None else np.asarray(watershed_ids, int)
        ch = np.zeros(n, int) if channel is None else np.asarray(channel, int)
        el = np.zeros(n) if elevation is None else np.asarray(elevation, float)
        h = spacing_deg / 2
        for r in range(ny):
            for c in range(nx):
                i = r * nx + c
                la = lat0 + r * spacing_deg
                lo = lon0 + c * spacing_deg
                ring = np.array([[la - h, lo - h], [la - h, lo + h], [la + h, lo + h],
                                 [la + h, lo - h], [la - h, lo - h]])
                area = _ring_area_sqft(ring, la)
                cells.append(Cell(i, (la, lo), ring, area, int(wid[i]), int(ch[i]), float(el[i])))
        boundary = Polygon([(lon0 - h, lat0 - h), (lon0 + (nx - 1) * spacing_deg + h, lat0 - h),
                            (lon0 + (nx - 1) * spacing_deg + h, lat0 + (ny - 1) * spacing_deg + h),
                            (lon0 - h, lat0 + (ny - 1) * spacing_deg + h)])
        return cls(cells, watershed_count, boundary=boundary)

    # GeoJSON ---------------------------------------------------------------

    @classmethod
    def from_geojson(cls, path) -> "Mesh":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreIOError(f"cannot read mesh {path}: {exc}") from exc
        cells = []
        for feat in doc.get("features", []):
            props = feat.get("properties") or {}
            try:
                geom = shape(feat["geometry"])
                cid = int(props["cell_id"])
                wid = int(props["watershed_id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"bad mesh feature: {exc}") from exc
            if geom.geom_type == "MultiPolygon":
                geom = max(geom.geoms, key=lambda g: g.area)
            ring = np.asarray(geom.exterior.coords)[:, ::-1]
            if "centroid_lat" in props and "centroid_lon" in props:
                centroid = (float(props["centroid_lat"]), float(props["centroid_lon"]))
            else:
                c = geom.centroid
                centroid = (c.y, c.x)
            area = float(props["area_sqft"]) if "area_sqft" in props else _ring_area_sqft(ring, centroid[0])
            cells.append(Cell(cid, centroid, ring, area, wid, int(props.get("channel", 0)),
                              float(props.get("elevation_ft", 0.0))))
        boundary = shape(doc["study_area"]) if "study_area" in doc else None
        return cls(cells, doc.get("watershed_count"), boundary=boundary)

    def to_geojson_dict(self, extra: dict[str, Sequence] | None = None) -> dict:
        feats = []
        for c in self.cells:
            props = {
                "cell_id": c.cell_id,
                "watershed_id": c.watershed_id,
                "channel": c.channel,
                "elevation_ft": c.elevation,
                "area_sqft": c.area,
                "centroid_lat": c.centroid[0],
                "centroid_lon": c.centroid[1],
            }
            for key, values in (extra or {}).items():
                props[key] = float(values[c.cell_id])
            feats.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [c.polygon[:, ::-1].tolist()]},
                "properties": props,
            })
        return {
            "type": "FeatureCollection",
            "watershed_count": self.watershed_count,
            "study_area": mapping(self.boundary),
            "features": feats,
        }


def _ordered_neighbours(xy: np.ndarray, i: int, cand: np.ndarray) -> np.ndarray:
    cand = np.asarray(cand, dtype=np.int64)
    dx = xy[cand, 0] - xy[i, 0]
    dy = xy[cand, 1] - xy[i, 1]
    d2 = dx * dx + dy * dy
    return cand[np.lexsort((cand, d2))]


def _ring_area_sqft(ring_latlon: np.ndarray, lat_ref: float) -> float:
    y = np.radians(ring_latlon[:, 0]) * EARTH_RADIUS_FT
    x = np.radians(ring_latlon[:, 1]) * np.cos(np.radians(lat_ref)) * EARTH_RADIUS_FT
    return float(abs(Polygon(np.column_stack([x, y])).area))


def mesh_fingerprint(lat: np.ndarray, lon: np.ndarray) -> str:
    """Hash of cell ids and centroids."""
    h = hashlib.sha256()
    h.update(np.arange(len(lat), dtype="<i8").tobytes())
    h.update(np.asarray(lat, dtype="<f8").tobytes())
    h.update(np.asarray(lon, dtype="<f8").tobytes())
    return h.hexdigest()


def assign_point_to_cell(point: tuple[float, float], mesh: Mesh) -> int:
    lat, lon = point
    ids, inside = mesh.assign([lat], [lon])
    if not inside[0]:
        raise PointOutsideStudyArea(f"point {point} lies outside the study area")
    return int(ids[0])


# events ----------------------------------------------------------------------


@dataclass
class StormEvent:
    """One precipitation-flood event; arrays are indexed by cell_id."""

    event_id: int
    cumulative: np.ndarray
    peak: np.ndarray
    duration: float
    depth: np.ndarray | None = None

    def __post_init__(self):
        self.cumulative = np.asarray(self.cumulative, dtype=float)
        self.peak = np.asarray(self.peak, dtype=float)
        self.duration = float(self.duration)
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=float)
        if np.any(self.cumulative < 0) or np.any(self.peak < 0):
            raise DataError(f"event {self.event_id}: negative precipitation")

    @property
    def n_cells(self) -> int:
        return len(self.cumulative)


def event_mean_depth(event: StormEvent) -> float:
    if event.depth is None or np.any(np.isnan(event.depth)):
        raise MissingDepths(f"event {event.event_id} lacks depths")
    return float(np.mean(event.depth))


EVENT_COLUMNS = ["event_id", "cell_id", "cumulative_in", "peak_in", "duration_h", "max_depth_ft"]


def read_events(path, mesh: Mesh | None = None) -> list[StormEvent]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise StoreIOError(f"cannot read events {path}: {exc}") from exc
    need = EVENT_COLUMNS[:5]
    if header[:5] != need:
        raise DataError(f"events header must start with {need}, got {header}")
    has_depth = len(header) > 5 and header[5] == "max_depth_ft"
    try:
        data = np.array([[float(v) for v in r[: 6 if has_depth else 5]] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric value in {path}: {exc}") from exc
    if np.isnan(data).any():
        raise DataError("missing values are not supported")
    return events_from_table(data, mesh)


def events_from_table(data: np.ndarray, mesh: Mesh | None = None) -> list[StormEvent]:
    if data.size == 0:
        return []
    eids = data[:, 0].astype(np.int64)
    cids = data[:, 1].astype(np.int64)
    n_cells = mesh.n_cells if mesh is not None else int(cids.max()) + 1
    events = []
    for eid in np.unique(eids):
        sel = eids == eid
        rows = data[sel]
        cell = cids[sel]
        if len(cell) != n_cells or not np.array_equal(np.sort(cell), np.arange(n_cells)):
            raise DataError(f"event {eid} does not cover every cell exactly once")
        order = np.argsort(cell)
        rows = rows[order]
        dur = np.unique(rows[:, 4])
        if len(dur) != 1:
            raise DataError(f"event {eid} has more than one duration")
        depth = rows[:, 5] if rows.shape[1] > 5 else None
        ev = StormEvent(int(eid), rows[:, 2], rows[:, 3], float(dur[0]), depth)
        bad = (ev.cumulative > 0) & (ev.peak > 0) & (ev.cumulative < ev.peak)
        if bad.any():
            raise DataError(f"event {eid}: peak exceeds cumulative in {int(bad.sum())} cells")
        events.append(ev)
    return events


def write_events(path, events: Iterable[StormEvent]) -> None:
    from .store import atomic_write

    def body(fh):
        events_l = list(events)
        with_depth = all(e.depth is not None for e in events_l)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS if with_depth else EVENT_COLUMNS[:5])
        for e in events_l:
            for c in range(e.n_cells):
                row = [e.event_id, c, repr(float(e.cumulative[c])), repr(float(e.peak[c])),
                       repr(e.duration)]
                if with_depth:
                    row.append(repr(float(e.depth[c])))
                w.writerow(row)

    atomic_write(path, body)


# splitting ------------------------------------------------------------------


def depth_class(mean_depth_ft: float, class_bounds_inches=(2.0, 6.0)) -> int:
    inches = mean_depth_ft * 12.0
    lo, hi = class_bounds_inches
    if inches <= lo:
        return 0
    if inches <= hi:
        return 1
    return 2


def _apportion(total: int, weights: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``total`` by ``weights`` under ``caps``."""
    weights = np.asarray(weights, float)
    alloc = np.zeros(len(weights), dtype=np.int64)
    remaining = int(min(total, caps.sum()))
    active = weights > 0
    while remaining > 0 and active.any():
        share = np.where(active, weights, 0.0)
        exact = remaining * share / share.sum()
        base = np.minimum(np.floor(exact).astype(np.int64), caps - alloc)
        left = remaining - int(base.sum())
        frac = np.where(active & (alloc + base < caps), exact - np.floor(exact), -1.0)
        for j in np.argsort(-frac, kind="stable")[:left]:
            if frac[j] >= 0:
                base[j] += 1
        alloc += base
        remaining -= int(base.sum())
        active = active & (alloc < caps)
        if base.sum() == 0:
            break
    return alloc


def stratified_split(events: Sequence[StormEvent], ratio=(2, 4, 1), validation_fraction=0.20,
                     class_bounds_inches=(2.0, 6.0), seed: int = 0, sample_size: int | None = None):
    """Split events into (train, validation, test).

    A sample is drawn from the three mean-depth classes in proportion ``ratio``.
    ``sample_size`` defaults to the largest whole multiple of the ratio the
    class counts allow. ``validation_fraction`` of the sample (class-stratified)
    becomes validation, the rest of the sample is train, and every unsampled
    event goes to test.
    """
    events = list(events)
    if len(events) < 7:
        raise InsufficientEvents(f"need at least 7 events, got {len(events)}")
    ratio = np.asarray(ratio, dtype=np.int64)
    classes = np.array([depth_class(event_mean_depth(e), class_bounds_inches) for e in events])
    members = [np.flatnonzero(classes == k) for k in range(3)]
    counts = np.array([len(m) for m in members])
    empty = [k for k in range(3) if ratio[k] > 0 and counts[k] == 0]
    if empty:
        raise InsufficientEvents(f"mean-depth classes {empty} are empty; class counts {counts.tolist()}")

    rng = np.random.default_rng(seed)
    if sample_size is None:
        units = min(counts[k] // ratio[k] for k in range(3) if ratio[k] > 0)
        if units == 0:
            raise InsufficientEvents(f"class counts {counts.tolist()} cannot host ratio {ratio.tolist()}")
        take = ratio * units
    else:
        take = _apportion(int(sample_size), ratio, counts)

    sampled = [rng.permutation(members[k])[: take[k]] for k in range(3)]
    n_sampled = int(sum(len(s) for s in sampled))
    n_val = int(np.floor(validation_fraction * n_sampled + 0.5))
    val_take = _apportion(n_val, np.array([len(s) for s in sampled], float),
                          np.array([len(s) for s in sampled]))
    train_idx, val_idx = [], []
    for k in range(3):
        s = rng.permutation(sampled[k])
        val_idx.extend(s[: val_take[k]].tolist())
        train_idx.extend(s[val_take[k]:].tolist())
    used = set(train_idx) | set(val_idx)
    test_idx = [i for i in range(len(events)) if i not in used]
    pick = lambda idx: [events[i] for i in sorted(idx)]  # noqa: E731
    return pick(train_idx), pick(val_idx), pick(test_idx)
