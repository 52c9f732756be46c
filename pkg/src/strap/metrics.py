"""Error metrics and the metrics report shared by the model and the baselines.

Report layout (also described by ``schemas/metrics.schema.json``)::

    {"overall": {"mae", "rmse", "mape", "n"},
     "cold": {"mae", "n"}, "warm": {"mae", "n"},
     "n_cold", "n_warm"}

MAE/RMSE are in millions of KRW, MAPE in percent. An empty group has
``"mae": null``.
"""

from __future__ import annotations

import numpy as np

from strap.datamodel import Dataset, cold_warm_partition
from strap.errors import DataError

# buckets by number of prior transactions of the resident
HISTORY_BUCKETS = ((0, 0), (1, 1), (2, 4), (5, 9), (10, 19), (20, 49), (50, None))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(pred - target)))


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mape(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(target - pred) / target) * 100.0)


def metrics_report(ds: Dataset, ids, pred) -> dict:
    """Overall MAE/RMSE/MAPE plus the COLD/WARM breakdown for transaction ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.float64)
    if len(ids) == 0:
        raise DataError("cannot evaluate an empty split")
    if pred.shape != ids.shape:
        raise DataError(f"{len(pred)} predictions for {len(ids)} transactions")
    target = ds.tx_price[ds.tx_pos(ids)]
    cold_ids, _ = cold_warm_partition(ds, ids)
    is_cold = np.isin(ids, cold_ids)

    def group(mask):
        n = int(mask.sum())
        return {"mae": mae(pred[mask], target[mask]) if n else None, "n": n}

    cold, warm = group(is_cold), group(~is_cold)
    return {
        "overall": {"mae": mae(pred, target), "rmse": rmse(pred, target), "mape": mape(pred, target), "n": len(ids)},
        "cold": cold,
        "warm": warm,
        "n_cold": cold["n"],
        "n_warm": warm["n"],
    }


def history_count_table(ds: Dataset, ids, pred) -> list[dict]:
    """MAE per bucket of prior-transaction count (rows for non-empty buckets only)."""
    ids = np.asarray(ids, dtype=np.int64)
    pos = ds.tx_pos(ids)
    prior = ds.history.count_before(ds.tx_res[pos], ds.tx_ts[pos])
    err = np.abs(np.asarray(pred) - ds.tx_price[pos])
    rows = []
    for lo, hi in HISTORY_BUCKETS:
        mask = prior >= lo if hi is None else (prior >= lo) & (prior <= hi)
        if mask.any():
            label = f"{lo}+" if hi is None else (str(lo) if lo == hi else f"{lo}-{hi}")
            rows.append({"history_count": label, "n": int(mask.sum()), "mae": float(err[mask].mean())})
    return rows
