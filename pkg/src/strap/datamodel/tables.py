"""Entity tables, the columnar Dataset container and its CSV format.

Column orders (UTF-8, header row, one file per table):

    residents.csv     resident_id,lat,lon,rf_0..rf_{d_r-1}
    transactions.csv  transaction_id,resident_id,timestamp,price,ef_0..ef_{d_e-1}
    amenities.csv     amenity_id,lat,lon,kind,af_0..af_{d_a-1}
    stations.csv      station_id,lat,lon,kind,sf_0..sf_{d_s-1}

Reals are written with ``repr`` so a save/load round trip is bit-exact.
Prices are in millions of KRW; timestamps are integer days since 1970-01-01.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from strap.errors import DataError

AMENITY_KINDS = ("school", "hospital", "store")
STATION_KINDS = ("train", "subway", "bus")

TABLE_FILES = {
    "residents": "residents.csv",
    "transactions": "transactions.csv",
    "amenities": "amenities.csv",
    "stations": "stations.csv",
}


@dataclass(frozen=True)
class TransactionEvent:
    transaction_id: int
    resident_id: int
    timestamp: int
    ef: np.ndarray
    price: float


@dataclass(frozen=True)
class Resident:
    resident_id: int
    lat: float
    lon: float
    rf: np.ndarray
    history: tuple[int, ...]


@dataclass(frozen=True)
class Amenity:
    amenity_id: int
    lat: float
    lon: float
    af: np.ndarray
    kind: str


@dataclass(frozen=True)
class Station:
    station_id: int
    lat: float
    lon: float
    sf: np.ndarray
    kind: str


@dataclass(frozen=True)
class NormStats:
    """Per-column location/scale used to put inputs into model space.

    Transaction columns and prices are fitted on training rows only; the
    static entity tables have no time axis and are fitted on all rows.
    """

    price_mean: float
    price_std: float
    ef_mean: np.ndarray
    ef_std: np.ndarray
    rf_mean: np.ndarray
    rf_std: np.ndarray
    af_mean: np.ndarray
    af_std: np.ndarray
    sf_mean: np.ndarray
    sf_std: np.ndarray

    def to_json(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, blob: dict) -> NormStats:
        kw = {}
        for f in dataclasses.fields(cls):
            v = blob[f.name]
            kw[f.name] = float(v) if f.name.startswith("price") else np.asarray(v, dtype=np.float64)
        return cls(**kw)

    def standardize_price(self, p):
        return (np.asarray(p, dtype=np.float64) - self.price_mean) / self.price_std

    def unstandardize_price(self, z):
        return np.asarray(z, dtype=np.float64) * self.price_std + self.price_mean


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    return float(v)


def _col_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[0] == 0:
        return np.zeros(x.shape[1]), np.ones(x.shape[1])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


@dataclass(frozen=True)
class Dataset:
    """The four entity tables in columnar form, each sorted by id.

    Foreign keys are stored both as ids (``tx_resident_id``) and as row
    positions into the resident table (``tx_res``).
    """

    res_id: np.ndarray
    res_lat: np.ndarray
    res_lon: np.ndarray
    res_rf: np.ndarray
    tx_id: np.ndarray
    tx_resident_id: np.ndarray
    tx_ts: np.ndarray
    tx_price: np.ndarray
    tx_ef: np.ndarray
    am_id: np.ndarray
    am_lat: np.ndarray
    am_lon: np.ndarray
    am_kind: np.ndarray
    am_af: np.ndarray
    st_id: np.ndarray
    st_lat: np.ndarray
    st_lon: np.ndarray
    st_kind: np.ndarray
    st_sf: np.ndarray
    stats: NormStats | None = None

    @property
    def d_e(self) -> int:
        return self.tx_ef.shape[1]

    @property
    def d_r(self) -> int:
        return self.res_rf.shape[1]

    @property
    def d_a(self) -> int:
        return self.am_af.shape[1]

    @property
    def d_s(self) -> int:
        return self.st_sf.shape[1]

    @property
    def n_residents(self) -> int:
        return len(self.res_id)

    @property
    def n_transactions(self) -> int:
        return len(self.tx_id)

    @cached_property
    def tx_res(self) -> np.ndarray:
        return np.searchsorted(self.res_id, self.tx_resident_id)

    @cached_property
    def history(self) -> HistoryIndex:
        return HistoryIndex.build(self)

    def tx_pos(self, transaction_ids) -> np.ndarray:
        ids = np.asarray(transaction_ids, dtype=np.int64)
        pos = np.searchsorted(self.tx_id, ids)
        pos_c = np.minimum(pos, len(self.tx_id) - 1)
        if len(self.tx_id) == 0 or np.any(self.tx_id[pos_c] != ids):
            raise DataError("unknown transaction id(s) requested")
        return pos_c

    def res_pos(self, resident_ids) -> np.ndarray:
        ids = np.asarray(resident_ids, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.res_id, ids), max(len(self.res_id) - 1, 0))
        if len(self.res_id) == 0 or np.any(self.res_id[pos] != ids):
            raise DataError("unknown resident id(s) requested")
        return pos

    # row views -------------------------------------------------------------

    def transaction(self, transaction_id: int) -> TransactionEvent:
        i = int(self.tx_pos([transaction_id])[0])
        return TransactionEvent(
            int(self.tx_id[i]), int(self.tx_resident_id[i]), int(self.tx_ts[i]),
            self.tx_ef[i].copy(), float(self.tx_price[i]),
        )

    def resident(self, resident_id: int) -> Resident:
        i = int(self.res_pos([resident_id])[0])
        idx = self.history
        rows = idx.order[idx.ptr[i] : idx.ptr[i + 1]]
        return Resident(
            int(self.res_id[i]), float(self.res_lat[i]), float(self.res_lon[i]),
            self.res_rf[i].copy(), tuple(int(t) for t in self.tx_id[rows]),
        )

    def amenity(self, amenity_id: int) -> Amenity:
        i = int(np.searchsorted(self.am_id, amenity_id))
        return Amenity(int(self.am_id[i]), float(self.am_lat[i]), float(self.am_lon[i]),
                       self.am_af[i].copy(), str(self.am_kind[i]))

    def station(self, station_id: int) -> Station:
        i = int(np.searchsorted(self.st_id, station_id))
        return Station(int(self.st_id[i]), float(self.st_lat[i]), float(self.st_lon[i]),
                       self.st_sf[i].copy(), str(self.st_kind[i]))

    # derived datasets --------------------------------------------------------

    def with_stats(self, train_ids) -> Dataset:
        """Copy of this dataset carrying normalization stats fitted on ``train_ids``."""
        pos = self.tx_pos(np.asarray(sorted(train_ids), dtype=np.int64)) if len(train_ids) else np.array([], int)
        prices = self.tx_price[pos]
        pstd = float(prices.std()) if len(prices) else 1.0
        ef_mean, ef_std = _col_stats(self.tx_ef[pos])
        rf_mean, rf_std = _col_stats(self.res_rf)
        af_mean, af_std = _col_stats(self.am_af)
        sf_mean, sf_std = _col_stats(self.st_sf)
        stats = NormStats(
            price_mean=float(prices.mean()) if len(prices) else 0.0,
            price_std=pstd if pstd > 0 else 1.0,
            ef_mean=ef_mean, ef_std=ef_std, rf_mean=rf_mean, rf_std=rf_std,
            af_mean=af_mean, af_std=af_std, sf_mean=sf_mean, sf_std=sf_std,
        )
        return dataclasses.replace(self, stats=stats)

    def replace(self, **changes) -> Dataset:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class HistoryIndex:
    """Transactions grouped by resident in (timestamp, id) order.

    Resident row ``i`` owns ``order[ptr[i]:ptr[i+1]]``. ``key`` packs
    (resident row, timestamp) into one sortable integer so "how many of
    resident v's transactions are strictly before t" is one searchsorted.
    """

    order: np.ndarray
    ptr: np.ndarray
    key: np.ndarray
    ts_min: int
    ts_span: int

    @classmethod
    def build(cls, ds: Dataset) -> HistoryIndex:
        res = ds.tx_res
        order = np.lexsort((ds.tx_id, ds.tx_ts, res))
        counts = np.bincount(res, minlength=ds.n_residents)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        if len(order):
            ts_min = int(ds.tx_ts.min())
            ts_span = int(ds.tx_ts.max()) - ts_min + 2
        else:
            ts_min, ts_span = 0, 2
        key = res[order].astype(np.int64) * ts_span + (ds.tx_ts[order] - ts_min)
        return cls(order=order, ptr=ptr, key=key, ts_min=ts_min, ts_span=ts_span)

    def count_before(self, res_rows, as_of) -> np.ndarray:
        """Number of transactions of each resident with timestamp strictly before ``as_of``."""
        res_rows = np.asarray(res_rows, dtype=np.int64)
        rel = np.clip(np.asarray(as_of, dtype=np.int64) - self.ts_min, 0, self.ts_span - 1)
        pos = np.searchsorted(self.key, res_rows * self.ts_span + rel, side="left")
        return pos - self.ptr[res_rows]


# ---------------------------------------------------------------------------
# CSV I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_table(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_table(
        path / TABLE_FILES["residents"],
        ["resident_id", "lat", "lon"] + [f"rf_{k}" for k in range(ds.d_r)],
        ([int(ds.res_id[i]), _fmt(ds.res_lat[i]), _fmt(ds.res_lon[i]), *map(_fmt, ds.res_rf[i])]
         for i in range(ds.n_residents)),
    )
    _write_table(
        path / TABLE_FILES["transactions"],
        ["transaction_id", "resident_id", "timestamp", "price"] + [f"ef_{k}" for k in range(ds.d_e)],
        ([int(ds.tx_id[i]), int(ds.tx_resident_id[i]), int(ds.tx_ts[i]), _fmt(ds.tx_price[i]),
          *map(_fmt, ds.tx_ef[i])] for i in range(ds.n_transactions)),
    )
    _write_table(
        path / TABLE_FILES["amenities"],
        ["amenity_id", "lat", "lon", "kind"] + [f"af_{k}" for k in range(ds.d_a)],
        ([int(ds.am_id[i]), _fmt(ds.am_lat[i]), _fmt(ds.am_lon[i]), str(ds.am_kind[i]), *map(_fmt, ds.am_af[i])]
         for i in range(len(ds.am_id))),
    )
    _write_table(
        path / TABLE_FILES["stations"],
        ["station_id", "lat", "lon", "kind"] + [f"sf_{k}" for k in range(ds.d_s)],
        ([int(ds.st_id[i]), _fmt(ds.st_lat[i]), _fmt(ds.st_lon[i]), str(ds.st_kind[i]), *map(_fmt, ds.st_sf[i])]
         for i in range(len(ds.st_id))),
    )


class _TableReader:
    def __init__(self, path: Path, fixed: list[str], prefix: str):
        self.path = path
        if not path.exists():
            raise DataError(f"{path}: table file missing")
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DataError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in rows[0]]
        for col in fixed:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        if header[: len(fixed)] != fixed:
            raise DataError(f"{path}: columns must start with {fixed}, got {header[: len(fixed)]}")
        feats = header[len(fixed):]
        expected = [f"{prefix}_{k}" for k in range(len(feats))]
        if feats != expected:
            missing = next((e for e, f in zip(expected, feats) if e != f), expected[-1] if expected else prefix)
            raise DataError(f"{path}: missing or misordered feature column {missing!r}")
        self.n_fixed = len(fixed)
        self.n_feat = len(feats)
        self.body = rows[1:]
        for k, row in enumerate(self.body):
            if len(row) != len(header):
                raise DataError(f"{path}: line {k + 2}: expected {len(header)} fields, got {len(row)}")

    def ints(self, col: int) -> np.ndarray:
        out = np.empty(len(self.body), dtype=np.int64)
        for k, row in enumerate(self.body):
            try:
                out[k] = int(row[col])
            except ValueError:
                raise DataError(f"{self.path}: line {k + 2}: column {col} is not an integer: {row[col]!r}") from None
        return out

    def reals(self, cols: list[int]) -> np.ndarray:
        out = np.empty((len(self.body), len(cols)), dtype=np.float64)
        for k, row in enumerate(self.body):
            for j, c in enumerate(cols):
                try:
                    v = float(row[c])
                except ValueError:
                    raise DataError(f"{self.path}: line {k + 2}: column {c} is not a number: {row[c]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{self.path}: line {k + 2}: non-finite value {row[c]!r}")
                out[k, j] = v
        return out

    def feature_cols(self) -> list[int]:
        return list(range(self.n_fixed, self.n_fixed + self.n_feat))

    def strings(self, col: int, allowed: tuple[str, ...]) -> np.ndarray:
        vals = []
        for k, row in enumerate(self.body):
            if row[col] not in allowed:
                raise DataError(f"{self.path}: line {k + 2}: kind {row[col]!r} not in {allowed}")
            vals.append(row[col])
        return np.asarray(vals, dtype=object)


def _sort_unique(path: Path, ids: np.ndarray) -> np.ndarray:
    order = np.argsort(ids, kind="stable")
    s = ids[order]
    dup = np.nonzero(s[1:] == s[:-1])[0]
    if len(dup):
        line = int(order[dup[0] + 1]) + 2
        raise DataError(f"{path}: line {line}: duplicate id {int(s[dup[0]])}")
    return order


def _check_coords(path: Path, lat: np.ndarray, lon: np.ndarray) -> None:
    bad = np.nonzero((np.abs(lat) > 90) | (np.abs(lon) > 180))[0]
    if len(bad):
        raise DataError(f"{path}: line {int(bad[0]) + 2}: coordinates out of range")


def load_dataset(path) -> Dataset:
    """Read and validate the four tables under ``path``."""
    path = Path(path)
    r = _TableReader(path / TABLE_FILES["residents"], ["resident_id", "lat", "lon"], "rf")
    t = _TableReader(path / TABLE_FILES["transactions"], ["transaction_id", "resident_id", "timestamp", "price"], "ef")
    a = _TableReader(path / TABLE_FILES["amenities"], ["amenity_id", "lat", "lon", "kind"], "af")
    s = _TableReader(path / TABLE_FILES["stations"], ["station_id", "lat", "lon", "kind"], "sf")

    res_id = r.ints(0)
    res_ll = r.reals([1, 2])
    _check_coords(r.path, res_ll[:, 0], res_ll[:, 1])
    res_rf = r.reals(r.feature_cols())
    ro = _sort_unique(r.path, res_id)

    tx_id = t.ints(0)
    tx_rid = t.ints(1)
    tx_ts = t.ints(2)
    tx_price = t.reals([3])[:, 0]
    tx_ef = t.reals(t.feature_cols())
    known = np.isin(tx_rid, res_id)
    if not known.all():
        k = int(np.nonzero(~known)[0][0])
        raise DataError(f"{t.path}: line {k + 2}: unknown resident_id {int(tx_rid[k])}")
    nonpos = np.nonzero(tx_price <= 0)[0]
    if len(nonpos):
        raise DataError(f"{t.path}: line {int(nonpos[0]) + 2}: price must be positive")
    to = _sort_unique(t.path, tx_id)

    am_id = a.ints(0)
    am_ll = a.reals([1, 2])
    _check_coords(a.path, am_ll[:, 0], am_ll[:, 1])
    am_kind = a.strings(3, AMENITY_KINDS)
    am_af = a.reals(a.feature_cols())
    ao = _sort_unique(a.path, am_id)

    st_id = s.ints(0)
    st_ll = s.reals([1, 2])
    _check_coords(s.path, st_ll[:, 0], st_ll[:, 1])
    st_kind = s.strings(3, STATION_KINDS)
    st_sf = s.reals(s.feature_cols())
    so = _sort_unique(s.path, st_id)

    return Dataset(
        res_id=res_id[ro], res_lat=res_ll[ro, 0], res_lon=res_ll[ro, 1], res_rf=res_rf[ro],
        tx_id=tx_id[to], tx_resident_id=tx_rid[to], tx_ts=tx_ts[to], tx_price=tx_price[to], tx_ef=tx_ef[to],
        am_id=am_id[ao], am_lat=am_ll[ao, 0], am_lon=am_ll[ao, 1], am_kind=am_kind[ao], am_af=am_af[ao],
        st_id=st_id[so], st_lat=st_ll[so, 0], st_lon=st_ll[so, 1], st_kind=st_kind[so], st_sf=st_sf[so],
    )


def make_dataset(
    *,
    residents: dict,
    transactions: dict,
    amenities: dict | None = None,
    stations: dict | None = None,
    d_a: int | None = None,
    d_s: int | None = None,
) -> Dataset:
    """Build a Dataset from in-memory columns (same validation intent as the loader).

    Each argument maps column names (``id``, ``lat``, ``lon``, ``rf`` ...) to
    sequences. Handy for fixtures and for the synthetic generator.
    """

    def arr(v, dtype=np.float64):
        return np.asarray(v, dtype=dtype)

    def feats(v, n, d):
        if v is None:
            return np.zeros((n, d or 0))
        x = arr(v)
        if n == 0:
            return np.zeros((0, d if d is not None else (x.shape[1] if x.ndim == 2 else 0)))
        return x.reshape(n, -1)

    rid = arr(residents["id"], np.int64)
    ro = np.argsort(rid, kind="stable")
    tid = arr(transactions["id"], np.int64)
    to = np.argsort(tid, kind="stable")
    amenities = amenities or {}
    stations = stations or {}
    aid = arr(amenities.get("id", []), np.int64)
    ao = np.argsort(aid, kind="stable")
    sid = arr(stations.get("id", []), np.int64)
    so = np.argsort(sid, kind="stable")
    ds = Dataset(
        res_id=rid[ro], res_lat=arr(residents["lat"])[ro], res_lon=arr(residents["lon"])[ro],
        res_rf=feats(residents["rf"], len(rid), None)[ro],
        tx_id=tid[to], tx_resident_id=arr(transactions["resident_id"], np.int64)[to],
        tx_ts=arr(transactions["timestamp"], np.int64)[to], tx_price=arr(transactions["price"])[to],
        tx_ef=feats(transactions["ef"], len(tid), None)[to],
        am_id=aid[ao], am_lat=arr(amenities.get("lat", []))[ao], am_lon=arr(amenities.get("lon", []))[ao],
        am_kind=np.asarray(list(amenities.get("kind", [])), dtype=object)[ao],
        am_af=feats(amenities.get("af"), len(aid), d_a)[ao],
        st_id=sid[so], st_lat=arr(stations.get("lat", []))[so], st_lon=arr(stations.get("lon", []))[so],
        st_kind=np.asarray(list(stations.get("kind", [])), dtype=object)[so],
        st_sf=feats(stations.get("sf"), len(sid), d_s)[so],
    )
    validate_dataset(ds)
    return ds


def validate_dataset(ds: Dataset) -> None:
    if len(np.unique(ds.res_id)) != ds.n_residents or len(np.unique(ds.tx_id)) != ds.n_transactions:
        raise DataError("duplicate resident or transaction ids")
    if not np.isin(ds.tx_resident_id, ds.res_id).all():
        bad = ds.tx_id[~np.isin(ds.tx_resident_id, ds.res_id)][0]
        raise DataError(f"transaction {int(bad)} references an unknown resident")
    if np.any(ds.tx_price <= 0):
        raise DataError("prices must be positive")
    for name in ("res_rf", "tx_ef", "am_af", "st_sf", "tx_price", "res_lat", "res_lon"):
        if not np.all(np.isfinite(getattr(ds, name))):
            raise DataError(f"non-finite values in {name}")
    for kinds, allowed in ((ds.am_kind, AMENITY_KINDS), (ds.st_kind, STATION_KINDS)):
        if any(k not in allowed for k in kinds):
            raise DataError(f"entity kind outside {allowed}")
