"""Cell-wise flood exceedance probabilities and their export."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError, EmptyBatch, MeshFingerprintMismatch, StoreIOError
from .mesh import Mesh
from .store import atomic_write, dumps

DEFAULT_THRESHOLDS_FT = (1.0, 2.0, 4.0, 6.0)
CHANNEL_RGB = (128, 128, 128)
BACKGROUND_RGB = (255, 255, 255)


@dataclass
class ProbabilityMap:
    threshold: float
    probability: np.ndarray
    n_events: int
    mesh_fingerprint: str
    counts: np.ndarray | None = None


def _depth_matrix(events) -> tuple[np.ndarray, str | None]:
    events = list(events)
    if not events:
        raise EmptyBatch("no events")
    prints = {getattr(e, "mesh_fingerprint", None) for e in events} - {None, ""}
    if len(prints) > 1:
        raise MeshFingerprintMismatch("events come from different meshes")
    depth = np.stack([np.asarray(e.depth, float) for e in events])
    return depth, prints.pop() if prints else None


def probability_map(events, threshold: float, mesh_fingerprint: str | None = None) -> ProbabilityMap:
    """Fraction of events whose depth at each cell is >= ``threshold``.

    ``events`` is a sequence of objects with a ``depth`` array or an
    (n_events, n_cells) depth matrix.
    """
    if isinstance(events, np.ndarray):
        depth, fp = np.atleast_2d(events.astype(float)), None
        if depth.shape[0] == 0:
            raise EmptyBatch("no events")
    else:
        depth, fp = _depth_matrix(events)
    if fp is not None and mesh_fingerprint is not None and fp != mesh_fingerprint:
        raise MeshFingerprintMismatch("events and map disagree on the mesh")
    counts = np.count_nonzero(depth >= threshold, axis=0)
    n = depth.shape[0]
    return ProbabilityMap(float(threshold), counts / n, n, mesh_fingerprint or fp or "", counts)


def probability_maps(events, thresholds: Iterable[float] = DEFAULT_THRESHOLDS_FT,
                     mesh_fingerprint: str | None = None) -> list[ProbabilityMap]:
    events = events if isinstance(events, np.ndarray) else list(events)
    return [probability_map(events, t, mesh_fingerprint) for t in thresholds]


def ramp_color(p: float) -> tuple[int, int, int]:
    """Blue at 0, red at 1, linear in between."""
    p = min(max(float(p), 0.0), 1.0)
    return (int(round(255 * p)), 0, int(round(255 * (1 - p))))


def export_map(pmap: ProbabilityMap, mesh: Mesh, out_stem, formats: Sequence[str] = ("geojson", "csv", "png"),
               raster_width: int = 1024) -> dict[str, Path]:
    """Write ``<out_stem>.geojson|.csv|.png``; returns the written paths."""
    if len(pmap.probability) != mesh.n_cells:
        raise DataError("map and mesh differ in cell count")
    if pmap.mesh_fingerprint and pmap.mesh_fingerprint != mesh.fingerprint:
        raise MeshFingerprintMismatch("map was built on a different mesh")
    out_stem = Path(out_stem)
    written = {}
    for fmt in formats:
        path = out_stem.with_suffix(f".{fmt}")
        if fmt == "geojson":
            doc = mesh.to_geojson_dict({"probability": pmap.probability})
            doc["threshold_ft"] = pmap.threshold
            doc["n_events"] = pmap.n_events
            atomic_write(path, lambda fh: fh.write(json.dumps(doc)))
        elif fmt == "csv":
            def body(fh):
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("cell_id", "probability"))
                for c, p in enumerate(pmap.probability):
                    w.writerow((c, repr(float(p))))
            atomic_write(path, body)
        elif fmt == "png":
            img = rasterize(pmap.probability, mesh, raster_width)
            atomic_write(path, lambda fh: img.save(fh, format="PNG"), mode="wb")
        else:
            raise DataError(f"unknown export format {fmt!r}")
        written[fmt] = path
    return written


def raster_transform(mesh: Mesh, width: int):
    """(to_pixel, height) for a raster covering the study-area bounds."""
    minx, miny, maxx, maxy = mesh.boundary.bounds  # lon/lat
    x0, y0 = mesh.project(miny, minx)
    x1, y1 = mesh.project(maxy, maxx)
    span_x, span_y = float(x1 - x0), float(y1 - y0)
    height = max(1, int(round(width * span_y / span_x)))

    def to_pixel(lat, lon):
        x, y = mesh.project(lat, lon)
        px = (x - x0) / span_x * (width - 1)
        py = (y1 - y) / span_y * (height - 1)
        return px, py

    return to_pixel, height


def rasterize(probability, mesh: Mesh, width: int = 1024) -> Image.Image:
    to_pixel, height = raster_transform(mesh, width)
    img = Image.new("RGB", (width, height), BACKGROUND_RGB)
    draw = ImageDraw.Draw(img)
    for c in mesh.cells:
        px, py = to_pixel(c.polygon[:, 0], c.polygon[:, 1])
        color = CHANNEL_RGB if c.channel else ramp_color(probability[c.cell_id])
        draw.polygon(list(zip(px.tolist(), py.tolist())), fill=color)
    return img


def read_geojson_map(path) -> np.ndarray:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    feats = sorted(doc["features"], key=lambda f: f["properties"]["cell_id"])
    return np.array([f["properties"]["probability"] for f in feats], dtype=float)


def write_maps_manifest(path, maps: Sequence[ProbabilityMap]) -> None:
    atomic_write(path, lambda fh: fh.write(dumps({
        "thresholds_ft": [m.threshold for m in maps],
        "n_events": maps[0].n_events if maps else 0,
        "mesh_fingerprint": maps[0].mesh_fingerprint if maps else "",
    })))
