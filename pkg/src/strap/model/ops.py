"""Single-instance building blocks of the appraisal network.

All inputs are in model space: prices standardized and feature vectors
normalized with the dataset's training statistics (see
:meth:`Standardizer.event`). The batched path in :mod:`strap.model.forward`
computes the same quantities for many targets at once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from strap.datamodel import Dataset, NormStats, TransactionEvent
from strap.errors import DataError
from strap.numerics import Tensor, add, gru_cell_forward, linear, mean_aggregate, relu, reshape
from strap.model.params import ModelParams


@dataclass(frozen=True)
class PredictionTask:
    target_id: int
    resident_id: int
    as_of: int
    max_history: int | None = None


def make_task(ds: Dataset, transaction_id: int, max_history: int | None = None) -> PredictionTask:
    e = ds.transaction(transaction_id)
    return PredictionTask(e.transaction_id, e.resident_id, e.timestamp, max_history)


class Standardizer:
    """Maps raw rows into model space using a dataset's fitted stats."""

    def __init__(self, stats: NormStats):
        self.stats = stats

    def event(self, e: TransactionEvent) -> TransactionEvent:
        s = self.stats
        return replace(e, ef=(e.ef - s.ef_mean) / s.ef_std, price=float((e.price - s.price_mean) / s.price_std))

    def rf(self, rf: np.ndarray) -> np.ndarray:
        return (rf - self.stats.rf_mean) / self.stats.rf_std

    def af(self, af: np.ndarray) -> np.ndarray:
        return (af - self.stats.af_mean) / self.stats.af_std

    def sf(self, sf: np.ndarray) -> np.ndarray:
        return (sf - self.stats.sf_mean) / self.stats.sf_std


def embed_transaction(e: TransactionEvent, params: ModelParams) -> Tensor:
    """Price embedding plus feature embedding of one history event."""
    if e.ef.shape != (params["E_ef.W"].shape[1],):
        raise DataError(f"transaction features have shape {e.ef.shape}, expected ({params['E_ef.W'].shape[1]},)")
    p_emb = linear(Tensor([e.price]), params["E_p.W"], params["E_p.b"])
    ef_emb = linear(Tensor(e.ef), params["E_ef.W"], params["E_ef.b"])
    return add(p_emb, ef_emb)


def embed_features(ef: np.ndarray, params: ModelParams) -> Tensor:
    """Feature-only embedding, used for the target transaction (its price is the label)."""
    return linear(Tensor(ef), params["E_ef.W"], params["E_ef.b"])


def encode_history(history: Sequence[TransactionEvent], params: ModelParams, max_len: int | None) -> Tensor:
    """Final GRU state over the most recent ``max_len`` events, oldest first."""
    keys = [(e.timestamp, e.transaction_id) for e in history]
    if any(b <= a for a, b in zip(keys, keys[1:])):
        raise DataError("history must be strictly ordered by (timestamp, transaction id)")
    window = list(history) if max_len is None else list(history)[max(0, len(history) - max_len):]
    d = params.hidden_dim
    h = Tensor(np.zeros(d))
    if not window:
        return h
    gru = params.gru
    for e in window:
        h = gru_cell_forward(embed_transaction(e, params), h, gru)
    return h


def resident_embedding(rf: np.ndarray, history_code: Tensor, params: ModelParams) -> Tensor:
    return add(history_code, linear(Tensor(rf), params["E_rf.W"], params["E_rf.b"]))


def embed_amenity(af: np.ndarray, params: ModelParams) -> Tensor:
    return linear(Tensor(af), params["E_a.W"], params["E_a.b"])


def embed_station(sf: np.ndarray, params: ModelParams) -> Tensor:
    return linear(Tensor(sf), params["E_s.W"], params["E_s.b"])


def relation_message(r_i: Tensor, neigh_mean: Tensor, params: ModelParams, rel: str) -> Tensor:
    """``W_rel_r relu(W_rel_v r_i + W_v_rel neigh_mean) + b_rel_r`` for relation ``rel`` in r/a/s."""
    inner = add(linear(r_i, params[f"hgnn.W_{rel}v"]), linear(neigh_mean, params[f"hgnn.W_v{rel}"]))
    return linear(relu(inner), params[f"hgnn.W_{rel}r"], params[f"hgnn.b_{rel}r"])


def hgnn_aggregate(
    r_i: Tensor,
    neighbor_residents: Sequence[Tensor],
    amenities: Sequence[Tensor],
    stations: Sequence[Tensor],
    params: ModelParams,
) -> tuple[Tensor, Tensor, Tensor]:
    """Resident, amenity and station messages for one resident.

    Neighbor sequences must already be in ascending id order; empty sets
    aggregate to the zero vector.
    """
    d = params.hidden_dim
    r_bar = relation_message(r_i, mean_aggregate(neighbor_residents, dim=d), params, "r")
    a_bar = relation_message(r_i, mean_aggregate(amenities, dim=d), params, "a")
    s_bar = relation_message(r_i, mean_aggregate(stations, dim=d), params, "s")
    return r_bar, a_bar, s_bar


def build_state(ef_emb: Tensor, r_bar: Tensor, a_bar: Tensor, s_bar: Tensor) -> Tensor:
    return add(add(add(ef_emb, r_bar), a_bar), s_bar)


def predict_price(x: Tensor, params: ModelParams, stats: NormStats | None = None) -> tuple[Tensor, float | None]:
    """Standardized prediction and, when ``stats`` is given, the price in millions of KRW."""
    hidden = relu(linear(x, params["head.W_xh"], params["head.b_xh"]))
    out = linear(hidden, params["head.W_hp"], params["head.b_hp"])
    out = reshape(out, out.shape[:-1])
    raw = None if stats is None else float(stats.unstandardize_price(out.data))
    return out, raw
