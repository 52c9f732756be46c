"""Chronological train/validation/test split and the COLD/WARM partition."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from strap.datamodel.tables import Dataset
from strap.errors import ConfigError, DataError


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __iter__(self):
        return iter((self.train, self.val, self.test))

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def canonical_order(ds: Dataset) -> np.ndarray:
    """Transaction row positions sorted by (timestamp, transaction id)."""
    return np.lexsort((ds.tx_id, ds.tx_ts))


def chronological_split(ds: Dataset, ratios=(0.90, 0.05, 0.05)) -> Split:
    """Split transaction ids by global time order.

    Validation and test sizes are ``floor(ratio * n)``; train takes the rest.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n = ds.n_transactions
    if n < 3:
        raise DataError(f"need at least 3 transactions to split, got {n}")
    # tiny epsilon guards products like 0.05 * 100000 = 4999.999...
    n_val = max(1, math.floor(ratios[1] * n + 1e-9))
    n_test = max(1, math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError(f"split of {n} transactions leaves no training rows")
    ids = ds.tx_id[canonical_order(ds)]
    return Split(
        train=ids[:n_train].copy(),
        val=ids[n_train : n_train + n_val].copy(),
        test=ids[n_train + n_val :].copy(),
    )


def cold_warm_partition(ds: Dataset, split_ids) -> tuple[np.ndarray, np.ndarray]:
    """COLD: transactions whose resident has no strictly earlier transaction anywhere in ``ds``."""
    ids = np.asarray(split_ids, dtype=np.int64)
    if len(ids) == 0:
        return ids.copy(), ids.copy()
    pos = ds.tx_pos(ids)
    prior = ds.history.count_before(ds.tx_res[pos], ds.tx_ts[pos])
    cold = prior == 0
    return ids[cold], ids[~cold]
