"""Seeded synthetic housing market with a known price decomposition.

Every transaction price is the sum, in this order, of

    base       B_i
    trend      B_i * (g - 1),               g = (1 + drift) ** (t / 365)
    seasonal   B_i * g * A * sin(2 pi t / 365)
    amenity    w_a * amenity_score_i
    spillover  w_n * neighbor_base_i
    noise      Normal(0, noise_std)

with t in days since ``start_day``. ``B_i`` is a fixed linear map of the
community features plus a latent quality term that is never emitted: a
spatially smooth field (so nearby communities price alike) and an
idiosyncratic part (visible only through the community's own sales).

A share of communities are new developments that first appear late in the
period with a batch of same-day launch sales; those sales have no prior
history and form the COLD group.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from strap.datamodel import AMENITY_KINDS, STATION_KINDS, Dataset, make_dataset, save_dataset
from strap.datamodel.tables import TABLE_FILES
from strap.errors import ConfigError, DataError
from strap.graph import EARTH_RADIUS_KM, build_hetero_graph

COMPONENTS = ("base", "trend", "seasonal", "amenity", "spillover", "noise")
N_TIME_FEATURES = 3  # years since start, sin and cos of the season


@dataclass(frozen=True)
class SynthConfig:
    n_residents: int = 2000
    n_amenities: int = 350
    n_stations: int = 950
    # lat_min, lat_max, lon_min, lon_max in degrees
    bbox: tuple[float, float, float, float] = (37.30, 37.70, 126.75, 127.25)
    tx_per_resident: float = 50.0  # Poisson mean over the full period
    span_days: int = 1827
    start_day: int = 16801  # 2016-01-01
    drift: float = 0.05  # annual
    seasonal_amp: float = 0.03
    amenity_weight: float = 1.0
    spillover_weight: float = 0.2
    noise_std: float = 15.0
    base_level: float = 450.0
    feature_scale: float = 50.0  # std of the feature-driven part of the base price
    latent_smooth_std: float = 90.0
    latent_idio_std: float = 40.0
    latent_length_km: float = 8.0
    poi_quality_std: float = 40.0
    new_development_frac: float = 0.25
    launch_window_days: int = 730  # new developments launch within the final window
    launch_sales: float = 15.0  # mean number of same-day sales at launch
    radius_km: float = 5.0
    d_e: int = 13
    d_r: int = 25
    d_a: int = 10
    d_s: int = 7
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        self.validate()

    def validate(self) -> None:
        if len(self.bbox) != 4:
            raise ConfigError("bbox: expected [lat_min, lat_max, lon_min, lon_max]")
        lat0, lat1, lon0, lon1 = self.bbox
        if not (-90 <= lat0 < lat1 <= 90) or not (-180 <= lon0 < lon1 <= 180):
            raise ConfigError(f"bbox: degenerate or out-of-range bounding box {self.bbox}")
        for name in ("n_residents", "n_amenities", "n_stations", "span_days"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be > 0, got {getattr(self, name)}")
        for name in ("noise_std", "feature_scale", "latent_smooth_std", "latent_idio_std", "poi_quality_std",
                     "tx_per_resident", "launch_sales"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name}: must be finite and >= 0, got {v}")
        if not 0 <= self.new_development_frac <= 1:
            raise ConfigError(f"new_development_frac: must lie in [0, 1], got {self.new_development_frac}")
        if not 0 < self.launch_window_days <= self.span_days:
            raise ConfigError(f"launch_window_days: must lie in (0, span_days], got {self.launch_window_days}")
        if self.drift <= -1:
            raise ConfigError(f"drift: must be > -1, got {self.drift}")
        if self.latent_length_km <= 0 or self.radius_km <= 0:
            raise ConfigError("latent_length_km and radius_km must be > 0")
        if self.d_e < N_TIME_FEATURES + 5:
            raise ConfigError(f"d_e: need at least {N_TIME_FEATURES + 5} transaction features, got {self.d_e}")
        if min(self.d_r, self.d_a, self.d_s) < 1:
            raise ConfigError("d_r, d_a, d_s must be >= 1")

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["bbox"] = list(self.bbox)
        return out

    @classmethod
    def from_json(cls, blob: dict) -> SynthConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(blob) - names)
        if unknown:
            raise ConfigError(f"unknown synth config keys {unknown}")
        try:
            return cls(**blob)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class GroundTruth:
    """Per-transaction price components (aligned with ``transaction_id``) and per-resident latents."""

    transaction_id: np.ndarray
    base: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    amenity: np.ndarray
    spillover: np.ndarray
    noise: np.ndarray
    resident_id: np.ndarray
    resident_base: np.ndarray
    latent_smooth: np.ndarray
    latent_idio: np.ndarray
    amenity_score: np.ndarray
    neighbor_base: np.ndarray
    is_new: np.ndarray
    launch_day: np.ndarray  # -1 for communities present from the start

    def price(self) -> np.ndarray:
        return self.base + self.trend + self.seasonal + self.amenity + self.spillover + self.noise

    def component(self, name: str) -> np.ndarray:
        if name not in COMPONENTS:
            raise KeyError(name)
        return getattr(self, name)


def _uniform_points(rng, n, bbox):
    lat0, lat1, lon0, lon1 = bbox
    return rng.uniform(lat0, lat1, n), rng.uniform(lon0, lon1, n)


def _local_km(lat, lon, lat_ref):
    """Equirectangular projection in km; adequate at city scale."""
    k = math.pi / 180.0 * EARTH_RADIUS_KM
    return np.stack([lat * k, lon * k * math.cos(math.radians(lat_ref))], axis=1)


def _smooth_field(rng, xy_res, bbox, length_km, std):
    """Sum of Gaussian bumps, rescaled to standard deviation ``std`` over the residents."""
    if std == 0 or len(xy_res) < 2:
        return np.zeros(len(xy_res))
    lat0, lat1, lon0, lon1 = bbox
    pad_lat = length_km / 111.0
    pad_lon = pad_lat / max(math.cos(math.radians(0.5 * (lat0 + lat1))), 1e-6)
    area = (lat1 - lat0 + 2 * pad_lat) * (lon1 - lon0 + 2 * pad_lon) * 111.0**2
    n_bumps = max(8, int(2 * area / length_km**2))
    clat = rng.uniform(lat0 - pad_lat, lat1 + pad_lat, n_bumps)
    clon = rng.uniform(lon0 - pad_lon, lon1 + pad_lon, n_bumps)
    amp = rng.normal(size=n_bumps)
    xy_c = _local_km(clat, clon, 0.5 * (lat0 + lat1))
    d2 = ((xy_res[:, None, :] - xy_c[None, :, :]) ** 2).sum(axis=2)
    f = np.exp(-d2 / (2 * length_km**2)) @ amp
    f = f - f.mean()
    sd = f.std()
    return f * (std / sd) if sd > 0 else f


def _neighbor_mean(ptr, idx, values):
    out = np.zeros(len(ptr) - 1)
    for i in range(len(out)):
        nb = idx[ptr[i] : ptr[i + 1]]
        if len(nb):
            out[i] = values[nb].mean()
    return out


def _event_days(rng, cfg: SynthConfig, is_new: bool):
    """Sorted integer days (relative to start) of one community's sales, and its launch day."""
    if not is_new:
        n = rng.poisson(cfg.tx_per_resident)
        return np.sort(rng.integers(0, cfg.span_days, n)), -1
    launch = int(rng.integers(cfg.span_days - cfg.launch_window_days, cfg.span_days))
    n_launch = 1 + rng.poisson(max(cfg.launch_sales - 1.0, 0.0))
    remaining = cfg.span_days - launch - 1
    # a new complex turns over its units within the remaining period
    n_later = rng.poisson(cfg.tx_per_resident) if remaining > 0 else 0
    later = rng.integers(launch + 1, cfg.span_days, n_later) if n_later else np.zeros(0, np.int64)
    return np.sort(np.concatenate([np.full(n_launch, launch), later])), launch


def _transaction_features(rng, cfg: SynthConfig, days, unit_area, unit_type):
    """Time features, then area, floor, a 3-way unit-type one-hot, then noise columns."""
    n = len(days)
    phase = 2 * np.pi * days / 365.0
    ef = np.empty((n, cfg.d_e))
    ef[:, 0] = days / 365.0
    ef[:, 1] = np.sin(phase)
    ef[:, 2] = np.cos(phase)
    ef[:, 3] = unit_area + rng.normal(0.0, 8.0, n)
    ef[:, 4] = rng.integers(1, 31, n)
    types = np.where(rng.random(n) < 0.8, unit_type, rng.integers(0, 3, n))
    ef[:, 5:8] = np.eye(3)[types]
    ef[:, 8:] = rng.normal(size=(n, cfg.d_e - 8))
    return ef


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    s_layout, s_feat, s_latent, s_res = root.spawn(4)
    rng = np.random.default_rng(s_layout)
    n_r, n_a, n_s = cfg.n_residents, cfg.n_amenities, cfg.n_stations

    r_lat, r_lon = _uniform_points(rng, n_r, cfg.bbox)
    a_lat, a_lon = _uniform_points(rng, n_a, cfg.bbox)
    s_lat, s_lon = _uniform_points(rng, n_s, cfg.bbox)
    a_kind = np.asarray(AMENITY_KINDS, dtype=object)[rng.integers(0, len(AMENITY_KINDS), n_a)]
    s_kind = np.asarray(STATION_KINDS, dtype=object)[rng.integers(0, len(STATION_KINDS), n_s)]
    is_new = rng.random(n_r) < cfg.new_development_frac

    frng = np.random.default_rng(s_feat)
    rf = frng.normal(size=(n_r, cfg.d_r))
    af = frng.normal(size=(n_a, cfg.d_a))
    sf = frng.normal(size=(n_s, cfg.d_s))
    w_rf = frng.normal(size=cfg.d_r)
    w_rf *= cfg.feature_scale / np.linalg.norm(w_rf)
    w_af = frng.normal(size=cfg.d_a)
    w_af *= cfg.poi_quality_std / np.linalg.norm(w_af)
    w_sf = frng.normal(size=cfg.d_s)
    w_sf *= cfg.poi_quality_std / np.linalg.norm(w_sf)

    lrng = np.random.default_rng(s_latent)
    xy = _local_km(r_lat, r_lon, 0.5 * (cfg.bbox[0] + cfg.bbox[1]))
    smooth = _smooth_field(lrng, xy, cfg.bbox, cfg.latent_length_km, cfg.latent_smooth_std)
    idio = lrng.normal(0.0, cfg.latent_idio_std, n_r) if cfg.latent_idio_std > 0 else np.zeros(n_r)
    base = cfg.base_level + rf @ w_rf + smooth + idio

    ids = np.arange(n_r, dtype=np.int64)
    layout = make_dataset(
        residents={"id": ids, "lat": r_lat, "lon": r_lon, "rf": rf},
        transactions={"id": [], "resident_id": [], "timestamp": [], "price": [], "ef": np.zeros((0, cfg.d_e))},
        amenities={"id": np.arange(n_a), "lat": a_lat, "lon": a_lon, "kind": a_kind, "af": af},
        stations={"id": np.arange(n_s), "lat": s_lat, "lon": s_lon, "kind": s_kind, "sf": sf},
        d_a=cfg.d_a, d_s=cfg.d_s,
    )
    g = build_hetero_graph(layout, cfg.radius_km)
    amenity_score = _neighbor_mean(g.ra_ptr, g.ra_idx, af @ w_af) + _neighbor_mean(g.rs_ptr, g.rs_idx, sf @ w_sf)
    neighbor_base = _neighbor_mean(g.rr_ptr, g.rr_idx, base)

    cols = {k: [] for k in ("res", "day", "ef", "noise")}
    launch_day = np.full(n_r, -1, dtype=np.int64)
    for i, ss in enumerate(s_res.spawn(n_r)):
        prng = np.random.default_rng(ss)
        days, launch_day[i] = _event_days(prng, cfg, bool(is_new[i]))
        unit_area = prng.uniform(40.0, 160.0)
        unit_type = int(prng.integers(0, 3))
        cols["res"].append(np.full(len(days), i, dtype=np.int64))
        cols["day"].append(days.astype(np.int64))
        cols["ef"].append(_transaction_features(prng, cfg, days, unit_area, unit_type))
        cols["noise"].append(prng.normal(0.0, cfg.noise_std, len(days)) if cfg.noise_std > 0 else np.zeros(len(days)))
    res = np.concatenate(cols["res"])
    day = np.concatenate(cols["day"])
    ef = np.concatenate(cols["ef"]) if len(res) else np.zeros((0, cfg.d_e))
    noise = np.concatenate(cols["noise"])
    if len(res) == 0:
        raise DataError("configuration produced no transactions")

    # transaction ids follow global time order (resident id, then per-resident order, breaks ties)
    order = np.lexsort((np.arange(len(res)), res, day))
    res, day, ef, noise = res[order], day[order], ef[order], noise[order]

    B = base[res]
    growth = (1.0 + cfg.drift) ** (day / 365.0)
    comp = {
        "base": B,
        "trend": B * (growth - 1.0),
        "seasonal": B * growth * cfg.seasonal_amp * np.sin(2 * np.pi * day / 365.0),
        "amenity": cfg.amenity_weight * amenity_score[res],
        "spillover": cfg.spillover_weight * neighbor_base[res],
        "noise": noise,
    }
    price = comp["base"] + comp["trend"] + comp["seasonal"] + comp["amenity"] + comp["spillover"] + comp["noise"]
    if np.any(price <= 0):
        raise DataError(f"configuration produced {int((price <= 0).sum())} non-positive prices; raise base_level")

    tx_id = np.arange(len(res), dtype=np.int64)
    ds = make_dataset(
        residents={"id": ids, "lat": r_lat, "lon": r_lon, "rf": rf},
        transactions={"id": tx_id, "resident_id": res, "timestamp": day + cfg.start_day, "price": price, "ef": ef},
        amenities={"id": np.arange(n_a), "lat": a_lat, "lon": a_lon, "kind": a_kind, "af": af},
        stations={"id": np.arange(n_s), "lat": s_lat, "lon": s_lon, "kind": s_kind, "sf": sf},
        d_a=cfg.d_a, d_s=cfg.d_s,
    )
    gt = GroundTruth(
        transaction_id=tx_id, **comp,
        resident_id=ids, resident_base=base, latent_smooth=smooth, latent_idio=idio,
        amenity_score=amenity_score, neighbor_base=neighbor_base, is_new=is_new, launch_day=launch_day,
    )
    return ds, gt


def describe(gt: GroundTruth) -> dict[str, float]:
    """Share of each component in the summed component variances (shares add up to 1)."""
    var = {k: float(np.var(gt.component(k))) for k in COMPONENTS}
    total = sum(var.values())
    if total == 0:
        return {k: 0.0 for k in COMPONENTS}
    return {k: v / total for k, v in var.items()}


GROUND_TRUTH_FILE = "ground_truth.csv"
RESIDENT_TRUTH_FILE = "resident_truth.csv"
CONFIG_ECHO_FILE = "synth_config.json"


def write_synth(ds: Dataset, gt: GroundTruth, cfg: SynthConfig, path) -> list[Path]:
    """Dataset tables, both ground-truth tables and the config echo; returns the written paths."""
    path = Path(path)
    save_dataset(ds, path)
    with open(path / GROUND_TRUTH_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transaction_id", *COMPONENTS])
        cols = [gt.component(k) for k in COMPONENTS]
        for j, tid in enumerate(gt.transaction_id):
            w.writerow([int(tid), *(repr(float(c[j])) for c in cols)])
    with open(path / RESIDENT_TRUTH_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["resident_id", "base", "latent_smooth", "latent_idio", "amenity_score", "neighbor_base",
                    "is_new", "launch_day"])
        for i, rid in enumerate(gt.resident_id):
            w.writerow([int(rid), repr(float(gt.resident_base[i])), repr(float(gt.latent_smooth[i])),
                        repr(float(gt.latent_idio[i])), repr(float(gt.amenity_score[i])),
                        repr(float(gt.neighbor_base[i])), int(gt.is_new[i]), int(gt.launch_day[i])])
    (path / CONFIG_ECHO_FILE).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    return [path / f for f in TABLE_FILES.values()] + [path / GROUND_TRUTH_FILE, path / RESIDENT_TRUTH_FILE,
                                                       path / CONFIG_ECHO_FILE]
