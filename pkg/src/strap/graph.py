"""Heterogeneous proximity graph over residents, amenities and stations.

Two entities are connected when their great-circle distance is at most the
radius (boundary inclusive). Construction uses a uniform lat/lon grid whose
cells are at least one radius wide everywhere in the dataset's latitude
band, so the 3x3 block around a query cell always contains every true
neighbor. :func:`build_hetero_graph_bruteforce` is the O(n^2) reference.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from strap.datamodel import Dataset
from strap.errors import DataError

EARTH_RADIUS_KM = 6371.0088
EDGE_FILES = {"rr": "edges_rr.csv", "ra": "edges_ra.csv", "rs": "edges_rs.csv"}
GRAPH_META = "graph_meta.json"


def _check_range(lat, lon) -> None:
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > 90):
        raise ValueError("latitude outside [-90, 90]")
    if np.any(~np.isfinite(lon)) or np.any(np.abs(lon) > 180):
        raise ValueError("longitude outside [-180, 180]")


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km on a sphere of radius 6371.0088 km (vectorised)."""
    _check_range(lat1, lon1)
    _check_range(lat2, lon2)
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


class GridIndex:
    """Bucket points into lat/lon cells no narrower than ``radius_km``."""

    def __init__(self, lat, lon, radius_km: float, max_abs_lat: float | None = None):
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        _check_range(self.lat, self.lon)
        if radius_km <= 0:
            raise ValueError("radius must be positive")
        self.radius_km = radius_km
        if max_abs_lat is None:
            max_abs_lat = float(np.abs(self.lat).max()) if len(self.lat) else 0.0
        theta = radius_km / EARTH_RADIUS_KM
        pad = 1.0 + 1e-9
        self.cell_lat = math.degrees(theta) * pad
        cos_band = math.cos(math.radians(max_abs_lat))
        # hav(d) >= cos(lat1)cos(lat2)hav(dlon) bounds the longitude gap of any neighbor pair
        ratio = math.sin(theta / 2.0) / cos_band if cos_band > 0 else math.inf
        if ratio >= 1.0:
            self.n_lon = 1
        else:
            min_width = math.degrees(2.0 * math.asin(ratio)) * pad
            # columns must tile 360 exactly, else the wrap-around column is too narrow
            self.n_lon = int(360.0 // min_width)
            if self.n_lon < 3:
                self.n_lon = 1
        self.cell_lon = 360.0 / self.n_lon
        self.n_lat = int(math.floor(180.0 / self.cell_lat)) + 1
        self.cells: dict[tuple[int, int], np.ndarray] = {}
        buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        rows, cols = self._cell_of(self.lat, self.lon)
        for i, key in enumerate(zip(rows.tolist(), cols.tolist())):
            buckets[key].append(i)
        self.cells = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    def _cell_of(self, lat, lon):
        rows = np.floor((np.asarray(lat) + 90.0) / self.cell_lat).astype(np.int64)
        cols = np.floor((np.asarray(lon) + 180.0) / self.cell_lon).astype(np.int64) % self.n_lon
        return rows, cols

    def candidates(self, lat: float, lon: float) -> np.ndarray:
        """Indices in the 3x3 cell block around a point (a superset of its neighbors)."""
        row, col = (int(v) for v in self._cell_of(lat, lon))
        col_offsets = (0,) if self.n_lon == 1 else (-1, 0, 1)
        parts = []
        for dr in (-1, 0, 1):
            for dc in col_offsets:
                hit = self.cells.get((row + dr, (col + dc) % self.n_lon))
                if hit is not None:
                    parts.append(hit)
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))


@dataclass(frozen=True)
class HeteroGraph:
    """Typed adjacency in CSR form over row positions of the dataset tables.

    Tables are sorted by id, so ascending positions are ascending ids.
    """

    rr_ptr: np.ndarray
    rr_idx: np.ndarray
    ra_ptr: np.ndarray
    ra_idx: np.ndarray
    rs_ptr: np.ndarray
    rs_idx: np.ndarray
    radius_km: float

    @property
    def n_residents(self) -> int:
        return len(self.rr_ptr) - 1

    def rr(self, i: int) -> np.ndarray:
        return self.rr_idx[self.rr_ptr[i] : self.rr_ptr[i + 1]]

    def ra(self, i: int) -> np.ndarray:
        return self.ra_idx[self.ra_ptr[i] : self.ra_ptr[i + 1]]

    def rs(self, i: int) -> np.ndarray:
        return self.rs_idx[self.rs_ptr[i] : self.rs_ptr[i + 1]]

    def degrees(self) -> dict[str, float]:
        n = max(self.n_residents, 1)
        return {
            "resident": len(self.rr_idx) / n,
            "amenity": len(self.ra_idx) / n,
            "station": len(self.rs_idx) / n,
        }

    def edge_sets(self) -> dict[str, list[set[int]]]:
        out = {}
        for rel in ("rr", "ra", "rs"):
            ptr, idx = getattr(self, f"{rel}_ptr"), getattr(self, f"{rel}_idx")
            out[rel] = [set(idx[ptr[i] : ptr[i + 1]].tolist()) for i in range(self.n_residents)]
        return out

    def validate(self, ds: Dataset | None = None) -> None:
        for rel in ("rr", "ra", "rs"):
            ptr, idx = getattr(self, f"{rel}_ptr"), getattr(self, f"{rel}_idx")
            for i in range(self.n_residents):
                row = idx[ptr[i] : ptr[i + 1]]
                if np.any(np.diff(row) <= 0):
                    raise DataError(f"{rel} adjacency of resident row {i} is not strictly ascending")
        pairs = set(zip(np.repeat(np.arange(self.n_residents), np.diff(self.rr_ptr)).tolist(), self.rr_idx.tolist()))
        for u, v in pairs:
            if u == v:
                raise DataError(f"self-loop on resident row {u}")
            if (v, u) not in pairs:
                raise DataError(f"resident edge {u}->{v} has no reverse edge")
        if ds is not None and ds.n_residents != self.n_residents:
            raise DataError(f"graph has {self.n_residents} residents, dataset has {ds.n_residents}")


def _csr(lists: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    idx = np.concatenate(lists).astype(np.int64) if lists else np.zeros(0, dtype=np.int64)
    return ptr, idx


def _band(ds: Dataset) -> float:
    lats = [np.abs(a) for a in (ds.res_lat, ds.am_lat, ds.st_lat) if len(a)]
    return float(max(a.max() for a in lats)) if lats else 0.0


def build_hetero_graph(ds: Dataset, radius_km: float = 5.0) -> HeteroGraph:
    """Grid-indexed construction of all three relations."""
    band = _band(ds)
    n = ds.n_residents
    res_index = GridIndex(ds.res_lat, ds.res_lon, radius_km, band)
    am_index = GridIndex(ds.am_lat, ds.am_lon, radius_km, band)
    st_index = GridIndex(ds.st_lat, ds.st_lon, radius_km, band)

    rr: list[list[int]] = [[] for _ in range(n)]
    ra, rs = [], []
    for i in range(n):
        lat, lon = ds.res_lat[i], ds.res_lon[i]
        cand = res_index.candidates(lat, lon)
        # distances are always evaluated with the lower row first, as in the oracle
        cand = cand[cand > i]
        if len(cand):
            d = haversine_km(np.full(len(cand), lat), np.full(len(cand), lon), ds.res_lat[cand], ds.res_lon[cand])
            for j in cand[d <= radius_km].tolist():
                rr[i].append(j)
                rr[j].append(i)
        for index, lats, lons, sink in ((am_index, ds.am_lat, ds.am_lon, ra), (st_index, ds.st_lat, ds.st_lon, rs)):
            cand = index.candidates(lat, lon)
            if len(cand):
                d = haversine_km(np.full(len(cand), lat), np.full(len(cand), lon), lats[cand], lons[cand])
                sink.append(cand[d <= radius_km])
            else:
                sink.append(np.zeros(0, dtype=np.int64))
    rr_arrays = [np.asarray(sorted(x), dtype=np.int64) for x in rr]
    rr_ptr, rr_idx = _csr(rr_arrays)
    ra_ptr, ra_idx = _csr(ra)
    rs_ptr, rs_idx = _csr(rs)
    return HeteroGraph(rr_ptr, rr_idx, ra_ptr, ra_idx, rs_ptr, rs_idx, float(radius_km))


def build_hetero_graph_bruteforce(ds: Dataset, radius_km: float = 5.0) -> HeteroGraph:
    """Reference construction comparing every resident against every entity."""
    n = ds.n_residents
    rows: list[list[int]] = [[] for _ in range(n)]
    ra, rs = [], []
    for i in range(n):
        # every pair (i, j > i) evaluated with the lower row first
        later = np.arange(i + 1, n)
        if len(later):
            d = haversine_km(np.full(len(later), ds.res_lat[i]), np.full(len(later), ds.res_lon[i]),
                             ds.res_lat[later], ds.res_lon[later])
            for j in later[d <= radius_km].tolist():
                rows[i].append(j)
                rows[j].append(i)
        for lats, lons, sink in ((ds.am_lat, ds.am_lon, ra), (ds.st_lat, ds.st_lon, rs)):
            if len(lats):
                d = haversine_km(np.full(len(lats), ds.res_lat[i]), np.full(len(lats), ds.res_lon[i]), lats, lons)
                sink.append(np.nonzero(d <= radius_km)[0].astype(np.int64))
            else:
                sink.append(np.zeros(0, dtype=np.int64))
    rr = [np.asarray(sorted(r), dtype=np.int64) for r in rows]
    rr_ptr, rr_idx = _csr(rr)
    ra_ptr, ra_idx = _csr(ra)
    rs_ptr, rs_idx = _csr(rs)
    return HeteroGraph(rr_ptr, rr_idx, ra_ptr, ra_idx, rs_ptr, rs_idx, float(radius_km))


# ---------------------------------------------------------------------------
# edge-list files


def save_graph(graph: HeteroGraph, ds: Dataset, path) -> None:
    """Write ``edges_{rr,ra,rs}.csv`` (``src,dst`` ids) plus the radius in ``graph_meta.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    targets = {"rr": ds.res_id, "ra": ds.am_id, "rs": ds.st_id}
    for rel, fname in EDGE_FILES.items():
        ptr, idx = getattr(graph, f"{rel}_ptr"), getattr(graph, f"{rel}_idx")
        with open(path / fname, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            for i in range(graph.n_residents):
                src = int(ds.res_id[i])
                for j in idx[ptr[i] : ptr[i + 1]]:
                    w.writerow([src, int(targets[rel][j])])
    meta = {"radius_km": graph.radius_km, "n_residents": graph.n_residents}
    (path / GRAPH_META).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def graph_files_present(path) -> bool:
    path = Path(path)
    return all((path / f).exists() for f in EDGE_FILES.values()) and (path / GRAPH_META).exists()


def load_graph(ds: Dataset, path) -> HeteroGraph:
    path = Path(path)
    if not graph_files_present(path):
        raise DataError(f"{path}: graph files missing (run build-graph first)")
    meta = json.loads((path / GRAPH_META).read_text(encoding="utf-8"))
    targets = {"rr": ds.res_id, "ra": ds.am_id, "rs": ds.st_id}
    arrays = {}
    for rel, fname in EDGE_FILES.items():
        with open(path / fname, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["src", "dst"]:
            raise DataError(f"{path / fname}: expected header src,dst")
        src = np.asarray([int(r[0]) for r in rows[1:]], dtype=np.int64)
        dst = np.asarray([int(r[1]) for r in rows[1:]], dtype=np.int64)
        for ids, ref, what in ((src, ds.res_id, "resident"), (dst, targets[rel], "target")):
            ok = np.isin(ids, ref)
            if not ok.all():
                line = int(np.nonzero(~ok)[0][0]) + 2
                raise DataError(f"{path / fname}: line {line}: unknown {what} id")
        s = np.searchsorted(ds.res_id, src)
        d = np.searchsorted(targets[rel], dst)
        order = np.lexsort((d, s))
        s, d = s[order], d[order]
        ptr = np.zeros(ds.n_residents + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(np.bincount(s, minlength=ds.n_residents))
        arrays[rel] = (ptr, d)
    g = HeteroGraph(*arrays["rr"], *arrays["ra"], *arrays["rs"], float(meta["radius_km"]))
    g.validate(ds)
    return g
