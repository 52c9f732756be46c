"""Comparison baselines: Repeat, ridge-conditioned linear regression, and a two-layer GCN."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from strap.datamodel import Dataset, Split
from strap.errors import ConfigError, DataError, NumericalError
from strap.graph import HeteroGraph
from strap.model.ops import PredictionTask
from strap.numerics import (
    AdamWState,
    Tensor,
    adamw_step,
    backward,
    clip_gradients,
    concat,
    gather_rows,
    linear,
    mae_loss,
    no_grad,
    relu,
    reshape,
    spmm,
)

# ---------------------------------------------------------------------------
# Repeat


def train_mean_price(ds: Dataset, train_ids) -> float:
    ids = np.asarray(train_ids, dtype=np.int64)
    if len(ids) == 0:
        raise DataError("empty training split")
    return float(ds.tx_price[ds.tx_pos(ids)].mean())


def repeat_predict(task: PredictionTask, ds: Dataset, fallback: float) -> float:
    """Latest earlier price of the same community, else ``fallback`` (the train mean)."""
    v = ds.res_pos([task.resident_id])
    return float(repeat_predict_rows(ds, v, np.array([task.as_of]), fallback)[0])


def repeat_predict_rows(ds: Dataset, res_rows, as_of, fallback: float) -> np.ndarray:
    hist = ds.history
    res_rows = np.asarray(res_rows, dtype=np.int64)
    k = hist.count_before(res_rows, np.asarray(as_of))
    out = np.full(len(res_rows), float(fallback))
    warm = k > 0
    prev = hist.order[hist.ptr[res_rows[warm]] + k[warm] - 1]
    out[warm] = ds.tx_price[prev]
    return out


def repeat_predict_ids(ds: Dataset, ids, fallback: float) -> np.ndarray:
    pos = ds.tx_pos(np.asarray(ids, dtype=np.int64))
    return repeat_predict_rows(ds, ds.tx_res[pos], ds.tx_ts[pos], fallback)


# ---------------------------------------------------------------------------
# linear regression


@dataclass(frozen=True)
class LinearModel:
    """Coefficients over ``[ef ++ rf]`` followed by the intercept."""

    weights: np.ndarray
    d_e: int
    d_r: int

    def __post_init__(self):
        if self.weights.shape != (self.d_e + self.d_r + 1,):
            raise DataError(f"expected {self.d_e + self.d_r + 1} weights, got {self.weights.shape}")

    @property
    def intercept(self) -> float:
        return float(self.weights[-1])

    @property
    def coef(self) -> np.ndarray:
        return self.weights[:-1]


def design_matrix(ds: Dataset, ids) -> np.ndarray:
    pos = ds.tx_pos(np.asarray(ids, dtype=np.int64))
    return np.hstack([ds.tx_ef[pos], ds.res_rf[ds.tx_res[pos]], np.ones((len(pos), 1))])


def ridge_solve(X: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """argmin |Xw - y|^2 + ridge |w|^2 through the normal equations."""
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    gram = X.T @ X
    if ridge == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericalError("singular normal equations; use a positive ridge")
    gram[np.diag_indices_from(gram)] += ridge
    try:
        return np.linalg.solve(gram, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"normal equations could not be solved: {exc}") from None


def linreg_fit(ds: Dataset, train_ids, ridge: float = 1e-6) -> LinearModel:
    """Closed-form fit on raw features and raw prices (millions of KRW)."""
    ids = np.asarray(train_ids, dtype=np.int64)
    if len(ids) == 0:
        raise DataError("empty training split")
    X = design_matrix(ds, ids)
    y = ds.tx_price[ds.tx_pos(ids)]
    return LinearModel(ridge_solve(X, y, ridge), ds.d_e, ds.d_r)


def linreg_predict(model: LinearModel, task: PredictionTask, ds: Dataset) -> float:
    return float(linreg_predict_ids(model, ds, [task.target_id])[0])


def linreg_predict_ids(model: LinearModel, ds: Dataset, ids) -> np.ndarray:
    if (ds.d_e, ds.d_r) != (model.d_e, model.d_r):
        raise DataError(f"model expects d_e={model.d_e}, d_r={model.d_r}; dataset has {ds.d_e}, {ds.d_r}")
    return design_matrix(ds, ids) @ model.weights


# ---------------------------------------------------------------------------
# GCN


def normalized_adjacency(n: int, ptr: np.ndarray, idx: np.ndarray) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for a symmetric adjacency given in CSR form."""
    data = np.ones(len(idx))
    A = sp.csr_matrix((data, idx, ptr), shape=(n, n)) + sp.identity(n, format="csr")
    deg = np.asarray(A.sum(axis=1)).ravel()
    scale = sp.diags(1.0 / np.sqrt(deg))
    out = (scale @ A @ scale).tocsr()
    out.sort_indices()
    return out


@dataclass
class GcnParams:
    W1: Tensor  # (d_h, d_in)
    W2: Tensor  # (d_h, d_h)
    w_head: Tensor  # (1, d_h + d_e)
    b_head: Tensor  # (1,)

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def init(cls, d_in: int, d_h: int, d_e: int, seed: int = 0) -> GcnParams:
        rng = np.random.default_rng(seed)

        def w(shape):
            b = 1.0 / math.sqrt(shape[1])
            return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

        return cls(w((d_h, d_in)), w((d_h, d_h)), w((1, d_h + d_e)), Tensor(np.zeros(1), requires_grad=True))


def gcn_forward(X, A_hat: sp.csr_matrix, params: GcnParams) -> Tensor:
    """Node codes ``relu(A relu(A X W1) W2)``."""
    h = relu(spmm(A_hat, linear(X, params.W1)))
    return relu(spmm(A_hat, linear(h, params.W2)))


def gcn_head(codes: Tensor, node_rows: np.ndarray, ef, params: GcnParams) -> Tensor:
    z = concat([gather_rows(codes, node_rows), ef], axis=1)
    out = linear(z, params.w_head, params.b_head)
    return reshape(out, (len(node_rows),))


@dataclass(frozen=True)
class GcnConfig:
    hidden_dim: int = 32
    lr: float = 5e-3
    batch_size: int = 128
    epochs: int = 10
    weight_decay: float = 1e-5
    clip: float = 0.5
    seed: int = 0
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.hidden_dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.lr < 0 or self.clip <= 0:
            raise ConfigError(f"invalid GCN config {self}")


@dataclass
class GcnModel:
    params: GcnParams
    config: GcnConfig
    A_hat: sp.csr_matrix
    node_features: np.ndarray  # normalized
    ef_mean: np.ndarray
    ef_std: np.ndarray
    price_mean: float
    price_std: float
    log: list[dict] = field(default_factory=list)


def gcn_node_features(ds: Dataset, train_ids) -> np.ndarray:
    """Per resident: rf followed by the mean of its training-split transaction features (zeros if none)."""
    pos = ds.tx_pos(np.asarray(train_ids, dtype=np.int64))
    res = ds.tx_res[pos]
    counts = np.bincount(res, minlength=ds.n_residents).astype(np.float64)
    sums = np.zeros((ds.n_residents, ds.d_e))
    np.add.at(sums, res, ds.tx_ef[pos])
    means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return np.hstack([ds.res_rf, means])


def _standardize_cols(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def gcn_predict_ids(model: GcnModel, ds: Dataset, ids, batch_size: int = 1024) -> np.ndarray:
    pos = ds.tx_pos(np.asarray(ids, dtype=np.int64))
    ef = (ds.tx_ef[pos] - model.ef_mean) / model.ef_std
    with no_grad():
        codes = gcn_forward(Tensor(model.node_features), model.A_hat, model.params)
        out = np.empty(len(pos))
        for s in range(0, len(pos), batch_size):
            sl = slice(s, s + batch_size)
            out[sl] = gcn_head(codes, ds.tx_res[pos][sl], Tensor(ef[sl]), model.params).data
    return out * model.price_std + model.price_mean


def gcn_train(ds: Dataset, graph: HeteroGraph, split: Split, config: GcnConfig = GcnConfig()) -> GcnModel:
    """AdamW on the MAE of standardized prices, keeping the epoch with the best validation MAE."""
    train_ids = np.asarray(split.train, dtype=np.int64)
    if len(train_ids) == 0:
        raise DataError("empty training split")
    feats = gcn_node_features(ds, train_ids)
    f_mean, f_std = _standardize_cols(feats)
    X = (feats - f_mean) / f_std
    tpos = ds.tx_pos(train_ids)
    ef_mean, ef_std = _standardize_cols(ds.tx_ef[tpos])
    prices = ds.tx_price[tpos]
    p_mean = float(prices.mean())
    p_std = float(prices.std()) or 1.0
    A_hat = normalized_adjacency(ds.n_residents, graph.rr_ptr, graph.rr_idx)
    params = GcnParams.init(X.shape[1], config.hidden_dim, ds.d_e, config.seed)
    model = GcnModel(params, config, A_hat, X, ef_mean, ef_std, p_mean, p_std)

    ef_all = (ds.tx_ef[tpos] - ef_mean) / ef_std
    y_all = (prices - p_mean) / p_std
    res_all = ds.tx_res[tpos]
    opt = AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    tensors = params.tensors()
    best, best_val = None, None
    for epoch in range(config.epochs):
        perm = np.random.default_rng([config.seed, epoch]).permutation(len(tpos))
        batches = [perm[i : i + config.batch_size] for i in range(0, len(perm), config.batch_size)]
        if config.steps_per_epoch is not None:
            batches = batches[: config.steps_per_epoch]
        total = 0.0
        for b in batches:
            for t in tensors.values():
                t.grad = None
            codes = gcn_forward(Tensor(X), A_hat, params)
            loss = mae_loss(gcn_head(codes, res_all[b], Tensor(ef_all[b]), params), Tensor(y_all[b]))
            if not math.isfinite(float(loss.data)):
                raise NumericalError(f"non-finite GCN loss in epoch {epoch + 1}")
            backward(loss)
            grads = clip_gradients({k: t.grad for k, t in tensors.items() if t.grad is not None}, config.clip)
            adamw_step({k: t.data for k, t in tensors.items()}, grads, opt)
            total += float(loss.data) * len(b)
        entry = {"epoch": epoch + 1, "train_mae": total / sum(len(b) for b in batches) * p_std, "val_mae": None}
        if len(split.val):
            pred = gcn_predict_ids(model, ds, split.val)
            entry["val_mae"] = float(np.mean(np.abs(pred - ds.tx_price[ds.tx_pos(split.val)])))
        model.log.append(entry)
        if entry["val_mae"] is None or best_val is None or entry["val_mae"] < best_val:
            best_val = entry["val_mae"]
            best = {k: t.data.copy() for k, t in tensors.items()}
    if best is not None:
        for k, t in tensors.items():
            t.data = best[k]
    return model
