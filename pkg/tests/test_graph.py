import math

import numpy as np
import pytest

from oracles import law_of_cosines_km
from strap.datamodel import make_dataset
from strap.graph import (
    EARTH_RADIUS_KM,
    GridIndex,
    build_hetero_graph,
    build_hetero_graph_bruteforce,
    haversine_km,
    load_graph,
    save_graph,
)


def points_dataset(lat, lon, am=None, st=None):
    n = len(lat)
    am = am or ([], [])
    st = st or ([], [])
    return make_dataset(
        residents={"id": np.arange(n), "lat": lat, "lon": lon, "rf": np.zeros((n, 1))},
        transactions={"id": [], "resident_id": [], "timestamp": [], "price": [], "ef": np.zeros((0, 1))},
        amenities={"id": np.arange(len(am[0])), "lat": am[0], "lon": am[1], "kind": ["school"] * len(am[0]),
                   "af": np.zeros((len(am[0]), 1))},
        stations={"id": np.arange(len(st[0])), "lat": st[0], "lon": st[1], "kind": ["bus"] * len(st[0]),
                  "sf": np.zeros((len(st[0]), 1))},
        d_a=1, d_s=1,
    )


def random_entities(seed, n_res, n_am, n_st, bbox=(37.3, 37.7, 126.75, 127.25)):
    rng = np.random.default_rng(seed)

    def pts(n):
        return rng.uniform(bbox[0], bbox[1], n), rng.uniform(bbox[2], bbox[3], n)

    return points_dataset(*pts(n_res), am=pts(n_am), st=pts(n_st))


def test_haversine_identical():
    assert haversine_km(37.5, 127.0, 37.5, 127.0) == 0.0


def test_haversine_antipodal_equator():
    assert haversine_km(0, 0, 0, 180) == pytest.approx(math.pi * 6371.0088, rel=1e-15)
    assert haversine_km(0, 0, 0, 180) == pytest.approx(20015.1, abs=0.05)


def test_haversine_vs_law_of_cosines():
    rng = np.random.default_rng(0)
    lat1, lat2 = rng.uniform(-90, 90, 1000), rng.uniform(-90, 90, 1000)
    lon1, lon2 = rng.uniform(-180, 180, 1000), rng.uniform(-180, 180, 1000)
    d = haversine_km(lat1, lon1, lat2, lon2)
    checked = 0
    for k in range(1000):
        ref = law_of_cosines_km(lat1[k], lon1[k], lat2[k], lon2[k])
        if ref > 1.0:
            assert abs(d[k] - ref) / ref < 1e-6
            checked += 1
    assert checked > 990


def test_haversine_range_errors():
    with pytest.raises(ValueError):
        haversine_km(91, 0, 0, 0)
    with pytest.raises(ValueError):
        haversine_km(0, 0, 0, 181)


def offset_lat(km):
    return math.degrees(km / EARTH_RADIUS_KM)


def test_threshold_4_9_and_5_1_km():
    ds = points_dataset([37.0, 37.0 + offset_lat(4.9), 40.0, 40.0 + offset_lat(5.1)], [127.0] * 4)
    g = build_hetero_graph(ds, 5.0)
    assert g.rr(0).tolist() == [1] and g.rr(1).tolist() == [0]
    assert g.rr(2).tolist() == [] and g.rr(3).tolist() == []


def test_boundary_is_inclusive():
    ds = points_dataset([10.0, 10.0 + offset_lat(5.0)], [20.0, 20.0])
    d = haversine_km(ds.res_lat[0], ds.res_lon[0], ds.res_lat[1], ds.res_lon[1])
    g = build_hetero_graph(ds, d)
    assert g.rr(0).tolist() == [1]


def test_single_resident():
    g = build_hetero_graph(points_dataset([37.5], [127.0]), 5.0)
    assert g.rr(0).tolist() == [] and g.degrees()["resident"] == 0


@pytest.mark.parametrize("seed", [0, 1])
def test_grid_equals_bruteforce_1000(seed):
    ds = random_entities(seed, 600, 200, 200, bbox=(37.4, 37.6, 126.9, 127.1))
    a, b = build_hetero_graph(ds, 5.0), build_hetero_graph_bruteforce(ds, 5.0)
    assert a.edge_sets() == b.edge_sets()


def test_grid_equals_bruteforce_across_dateline_and_poles():
    rng = np.random.default_rng(3)
    lat = np.concatenate([rng.uniform(-10, 10, 150), rng.uniform(85, 90, 100)])
    lon = np.concatenate([rng.choice([-1, 1], 150) * rng.uniform(179.8, 180.0, 150), rng.uniform(-180, 180, 100)])
    ds = points_dataset(lat, lon)
    for r in (5.0, 40.0):
        assert build_hetero_graph(ds, r).edge_sets() == build_hetero_graph_bruteforce(ds, r).edge_sets()


def test_graph_invariants():
    ds = random_entities(4, 300, 50, 80, bbox=(37.45, 37.55, 126.95, 127.05))
    g = build_hetero_graph(ds, 5.0)
    g.validate(ds)
    for i in range(ds.n_residents):
        nb = g.rr(i)
        assert i not in nb.tolist()
        assert np.all(np.diff(nb) > 0)
        for j in nb:
            assert i in g.rr(j).tolist()
            assert haversine_km(ds.res_lat[i], ds.res_lon[i], ds.res_lat[j], ds.res_lon[j]) <= 5.0


def test_radius_monotone():
    ds = random_entities(5, 300, 60, 60)
    small, big = build_hetero_graph(ds, 3.0).edge_sets(), build_hetero_graph(ds, 5.0).edge_sets()
    for rel in small:
        for a, b in zip(small[rel], big[rel]):
            assert a <= b


def test_grid_candidates_superset():
    rng = np.random.default_rng(6)
    lat, lon = rng.uniform(37.3, 37.7, 500), rng.uniform(126.8, 127.2, 500)
    idx = GridIndex(lat, lon, 5.0)
    for q in range(0, 500, 25):
        cand = set(idx.candidates(lat[q], lon[q]).tolist())
        d = haversine_km(lat[q], lon[q], lat, lon)
        assert set(np.nonzero(d <= 5.0)[0].tolist()) <= cand


def test_edge_list_round_trip(tmp_path):
    ds = random_entities(7, 80, 20, 20, bbox=(37.45, 37.55, 126.95, 127.05))
    g = build_hetero_graph(ds, 5.0)
    save_graph(g, ds, tmp_path)
    back = load_graph(ds, tmp_path)
    assert back.edge_sets() == g.edge_sets() and back.radius_km == 5.0
