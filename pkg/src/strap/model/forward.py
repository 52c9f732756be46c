"""Batched forward pass with causal history windows.

For a target transaction at time ``as_of`` every resident involved (the
target's own community and each of its graph neighbors) is encoded from its
transactions strictly before ``as_of``, truncated to the most recent L. A
resident's window is fully determined by (resident, number of prior
transactions), so identical windows inside a batch are encoded once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from strap.datamodel import Dataset
from strap.errors import DataError
from strap.graph import HeteroGraph
from strap.model.ops import PredictionTask, relation_message
from strap.model.params import ModelParams, Variant, VariantConfig
from strap.numerics import Tensor, add, gather_rows, gru_sequence, linear, no_grad, relu, reshape, segment_mean


@dataclass(frozen=True)
class ModelInputs:
    """Model-space copies of every table column the network reads."""

    ds: Dataset
    price: np.ndarray
    ef: np.ndarray
    rf: np.ndarray
    af: np.ndarray
    sf: np.ndarray

    @classmethod
    def build(cls, ds: Dataset) -> ModelInputs:
        s = ds.stats
        if s is None:
            raise DataError("dataset has no normalization stats; call Dataset.with_stats(train_ids) first")
        return cls(
            ds=ds,
            price=(ds.tx_price - s.price_mean) / s.price_std,
            ef=(ds.tx_ef - s.ef_mean) / s.ef_std,
            rf=(ds.res_rf - s.rf_mean) / s.rf_std,
            af=(ds.am_af - s.af_mean) / s.af_std,
            sf=(ds.st_sf - s.sf_mean) / s.sf_std,
        )


def _members(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    m.sort_indices()
    return m


def _expand(ptr: np.ndarray, idx: np.ndarray, owners_res: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten adjacency lists of ``owners_res``: (batch row, neighbor) pairs."""
    counts = ptr[owners_res + 1] - ptr[owners_res]
    owner = np.repeat(np.arange(len(owners_res)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]) if len(counts) else np.zeros(0, np.int64)
    flat = ptr[owners_res][owner] + (np.arange(counts.sum()) - offsets[owner])
    return owner, idx[flat]


def resident_codes(
    inputs: ModelInputs, params: ModelParams, res: np.ndarray, k: np.ndarray, history_len: int | None,
    with_history: bool = True,
) -> tuple[Tensor, np.ndarray]:
    """Resident embeddings for (resident row, prior count) pairs, deduplicated.

    Returns the embeddings of the unique pairs (ascending by resident row,
    then count) and, for each input pair, its row in that table.
    """
    ds = inputs.ds
    hist = ds.history
    if not with_history:
        k = np.zeros_like(k)
    width = int(k.max()) + 1 if len(k) else 1
    uniq, inv = np.unique(res.astype(np.int64) * width + k, return_inverse=True)
    uv = uniq // width
    uk = uniq % width
    static = linear(Tensor(inputs.rf[uv]), params["E_rf.W"], params["E_rf.b"])
    if not with_history:
        return static, inv
    w = uk if history_len is None else np.minimum(uk, history_len)
    T = int(w.max()) if len(w) else 0
    if T == 0:
        return add(Tensor(np.zeros(static.shape)), static), inv
    steps = np.arange(T)
    valid = steps[None, :] >= (T - w)[:, None]
    slot = hist.ptr[uv][:, None] + uk[:, None] - T + steps[None, :]
    evt = hist.order[np.where(valid, slot, 0)]
    prices = np.where(valid, inputs.price[evt], 0.0)[..., None]
    feats = np.where(valid[..., None], inputs.ef[evt], 0.0)
    xe = add(linear(Tensor(prices), params["E_p.W"], params["E_p.b"]),
             linear(Tensor(feats), params["E_ef.W"], params["E_ef.b"]))
    codes = gru_sequence(xe, w, params.gru)
    return add(codes, static), inv


def forward_batch(
    inputs: ModelInputs,
    graph: HeteroGraph | None,
    params: ModelParams,
    config: VariantConfig,
    targets: np.ndarray,
) -> Tensor:
    """Standardized price predictions for transaction rows ``targets``."""
    ds = inputs.ds
    targets = np.asarray(targets, dtype=np.int64)
    res = ds.tx_res[targets]
    as_of = ds.tx_ts[targets]
    k_self = ds.history.count_before(res, as_of)
    ef_emb = linear(Tensor(inputs.ef[targets]), params["E_ef.W"], params["E_ef.b"])

    if config.variant is Variant.T_RAP:
        codes, inv = resident_codes(inputs, params, res, k_self, config.history_len)
        x = add(ef_emb, gather_rows(codes, inv))
    else:
        if graph is None:
            raise DataError(f"variant {config.variant.value} needs the proximity graph")
        B = len(targets)
        owner, nb = _expand(graph.rr_ptr, graph.rr_idx, res)
        k_nb = ds.history.count_before(nb, as_of[owner])
        codes, inv = resident_codes(
            inputs, params, np.concatenate([res, nb]), np.concatenate([k_self, k_nb]), config.history_len,
            with_history=config.variant is Variant.ST_RAP,
        )
        r_i = gather_rows(codes, inv[:B])
        r_mean = segment_mean(_members(owner, inv[B:], (B, codes.shape[0])), codes)

        a_owner, a_idx = _expand(graph.ra_ptr, graph.ra_idx, res)
        a_emb = linear(Tensor(inputs.af), params["E_a.W"], params["E_a.b"])
        a_mean = segment_mean(_members(a_owner, a_idx, (B, len(inputs.af))), a_emb)

        s_owner, s_idx = _expand(graph.rs_ptr, graph.rs_idx, res)
        s_emb = linear(Tensor(inputs.sf), params["E_s.W"], params["E_s.b"])
        s_mean = segment_mean(_members(s_owner, s_idx, (B, len(inputs.sf))), s_emb)

        r_bar = relation_message(r_i, r_mean, params, "r")
        a_bar = relation_message(r_i, a_mean, params, "a")
        s_bar = relation_message(r_i, s_mean, params, "s")
        x = add(add(add(ef_emb, r_bar), a_bar), s_bar)

    hidden = relu(linear(x, params["head.W_xh"], params["head.b_xh"]))
    out = linear(hidden, params["head.W_hp"], params["head.b_hp"])
    return reshape(out, (len(targets),))


def predict(
    inputs: ModelInputs,
    graph: HeteroGraph | None,
    params: ModelParams,
    config: VariantConfig,
    targets: np.ndarray,
    batch_size: int = 128,
) -> np.ndarray:
    """Predictions in millions of KRW, computed without recording gradients."""
    targets = np.asarray(targets, dtype=np.int64)
    out = np.empty(len(targets))
    with no_grad():
        for start in range(0, len(targets), batch_size):
            chunk = targets[start : start + batch_size]
            out[start : start + len(chunk)] = forward_batch(inputs, graph, params, config, chunk).data
    return inputs.ds.stats.unstandardize_price(out)


def strap_forward(
    task: PredictionTask, ds: Dataset, graph: HeteroGraph | None, params: ModelParams, variant: VariantConfig,
) -> float:
    """Predicted price (millions of KRW) for one task; reads only transactions before ``task.as_of``."""
    pos = ds.tx_pos([task.target_id])
    if int(ds.tx_resident_id[pos[0]]) != task.resident_id or int(ds.tx_ts[pos[0]]) != task.as_of:
        raise DataError(f"task does not match transaction {task.target_id}")
    if task.max_history is not None and task.max_history != variant.history_len:
        variant = VariantConfig(variant.variant, variant.hidden_dim, task.max_history)
    return float(predict(ModelInputs.build(ds), graph, params, variant, pos)[0])
