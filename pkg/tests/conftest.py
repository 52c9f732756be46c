import numpy as np
import pytest

from strap.datamodel import make_dataset
from strap.graph import build_hetero_graph


def tiny_dataset(d_e=3, d_r=2, d_a=2, d_s=2, seed=0):
    """Two nearby residents, one amenity and one station, a few sales each.

    Resident 10 has four sales, resident 11 has three; every entity lies
    within 5 km of every other. Timestamps include a same-day tie.
    """
    rng = np.random.default_rng(seed)
    residents = {"id": [10, 11], "lat": [37.50, 37.52], "lon": [127.00, 127.01], "rf": rng.normal(size=(2, d_r))}
    tx = {
        "id": [1, 2, 3, 4, 5, 6, 7],
        "resident_id": [10, 11, 10, 11, 10, 10, 11],
        "timestamp": [100, 105, 110, 110, 130, 150, 150],
        "price": [300.0, 420.0, 310.0, 430.0, 305.0, 320.0, 440.0],
        "ef": rng.normal(size=(7, d_e)),
    }
    amen = {"id": [0], "lat": [37.51], "lon": [127.005], "kind": ["school"], "af": rng.normal(size=(1, d_a))}
    stat = {"id": [0], "lat": [37.505], "lon": [127.02], "kind": ["subway"], "sf": rng.normal(size=(1, d_s))}
    return make_dataset(residents=residents, transactions=tx, amenities=amen, stations=stat, d_a=d_a, d_s=d_s)


@pytest.fixture
def tiny():
    ds = tiny_dataset()
    return ds.with_stats(ds.tx_id[:5]), build_hetero_graph(ds, 5.0)


D = 4


def model_fixture(seed=0, d_h=D, scale=1.0):
    """The documented d_h=4 setup: tiny dataset, 5-km graph, random weights and non-zero biases."""
    from strap.model import init_params

    ds = tiny_dataset()
    ds = ds.with_stats(ds.tx_id[:5])
    g = build_hetero_graph(ds, 5.0)
    params = init_params(d_h, ds.d_e, ds.d_r, ds.d_a, ds.d_s, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for t in params.tensors.values():
        if t.data.ndim == 1:  # non-zero biases exercise every term
            t.data[:] = rng.normal(0, 0.3, t.shape)
        t.data *= scale
    return ds, g, params


def oracle_args(ds, g, tid, L=None):
    """Keyword arguments of ``oracles.np_pipeline`` for target ``tid``, gathered by brute force."""
    from strap.model import ModelInputs

    inp = ModelInputs.build(ds)
    pos = int(ds.tx_pos([tid])[0])
    t, v = int(ds.tx_ts[pos]), int(ds.tx_res[pos])

    def hist(row):
        rows = [j for j in range(ds.n_transactions) if ds.tx_res[j] == row and ds.tx_ts[j] < t]
        rows.sort(key=lambda j: (ds.tx_ts[j], ds.tx_id[j]))
        return [(inp.price[j], inp.ef[j]) for j in rows]

    neigh = [(inp.rf[u], hist(u)) for u in g.rr(v)]
    return dict(ef_target=inp.ef[pos], hist_self=hist(v), rf_self=inp.rf[v], neigh=neigh,
                am_feats=[inp.af[a] for a in g.ra(v)], st_feats=[inp.sf[s] for s in g.rs(v)], L=L)


def standardized(ds, raw):
    return (raw - ds.stats.price_mean) / ds.stats.price_std


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
