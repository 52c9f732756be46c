"""Minibatch training with validation-based model selection, and evaluation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from strap.datamodel import (
    Dataset,
    NormStats,
    Split,
    chronological_split,
    load_checkpoint,
    save_checkpoint,
)
from strap.errors import ConfigError, DataError, NumericalError
from strap.graph import HeteroGraph
from strap.metrics import metrics_report
from strap.model.forward import ModelInputs, forward_batch, predict
from strap.model.params import ModelParams, Variant, VariantConfig, init_params
from strap.numerics import AdamWState, Tensor, adamw_step, backward, clip_gradients, mae_loss

BEST_PREFIX = "best/"


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "st_rap"
    hidden_dim: int = 64
    history_len: int | None = 30
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 10
    weight_decay: float = 1e-5
    clip: float = 0.5
    seed: int = 0
    # cap on minibatches per epoch (a fresh random subset each epoch); None = full pass
    steps_per_epoch: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant).value)
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.history_len is not None and self.history_len < 1:
            raise ConfigError(f"history_len must be >= 1 or null, got {self.history_len}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigError(f"lr must be a finite value >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.clip > 0:
            raise ConfigError(f"clip must be > 0, got {self.clip}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError(f"steps_per_epoch must be >= 1 or null, got {self.steps_per_epoch}")

    @property
    def variant_config(self) -> VariantConfig:
        return VariantConfig(self.variant, self.hidden_dim, self.history_len)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, blob: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(blob) - names)
        if unknown:
            raise ConfigError(f"unknown training config keys {unknown}")
        return cls(**blob)


@dataclass
class TrainState:
    """Everything needed to continue training after an interruption."""

    config: TrainConfig
    params: ModelParams
    opt: AdamWState
    stats: NormStats
    epoch: int = 0  # completed epochs
    best_params: ModelParams | None = None
    best_epoch: int | None = None
    best_val_mae: float | None = None
    log: list[dict] = field(default_factory=list)

    def extra(self) -> dict:
        return {
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "best_val_mae": self.best_val_mae,
            "log": self.log,
            "stats": self.stats.to_json(),
        }

    def save(self, path) -> None:
        arrays = self.params.arrays()
        if self.best_params is not None:
            arrays.update({BEST_PREFIX + k: v for k, v in self.best_params.arrays().items()})
        save_checkpoint(arrays, self.opt, self.config.to_json(), path, seed=self.config.seed, extra=self.extra())

    @classmethod
    def load(cls, path) -> TrainState:
        ckpt = load_checkpoint(path)
        if ckpt.opt_state is None:
            raise DataError(f"{path}: checkpoint has no optimizer state, cannot resume")
        cur = {k: v for k, v in ckpt.params.items() if not k.startswith(BEST_PREFIX)}
        best = {k[len(BEST_PREFIX):]: v for k, v in ckpt.params.items() if k.startswith(BEST_PREFIX)}
        ex = ckpt.extra
        return cls(
            config=TrainConfig.from_json(ckpt.config),
            params=ModelParams.from_arrays(cur),
            opt=ckpt.opt_state,
            stats=NormStats.from_json(ex["stats"]),
            epoch=ex["epoch"],
            best_params=ModelParams.from_arrays(best) if best else None,
            best_epoch=ex["best_epoch"],
            best_val_mae=ex["best_val_mae"],
            log=list(ex["log"]),
        )


@dataclass
class TrainResult:
    params: ModelParams  # best on validation (last epoch when there is no validation split)
    state: TrainState
    dataset: Dataset  # the input dataset carrying the fitted normalization stats
    split: Split

    @property
    def log(self) -> list[dict]:
        return self.state.log


def save_model(params: ModelParams, config: TrainConfig, stats: NormStats, path, extra: dict | None = None) -> None:
    """Inference checkpoint: parameters, config echo and normalization stats."""
    save_checkpoint(params.arrays(), None, config.to_json(), path, seed=config.seed,
                    extra={"stats": stats.to_json(), **(extra or {})})


def load_model(path) -> tuple[ModelParams, TrainConfig, NormStats]:
    ckpt = load_checkpoint(path)
    if "stats" not in ckpt.extra:
        raise DataError(f"{path}: checkpoint carries no normalization stats")
    arrays = {k: v for k, v in ckpt.params.items() if not k.startswith(BEST_PREFIX)}
    return ModelParams.from_arrays(arrays), TrainConfig.from_json(ckpt.config), NormStats.from_json(ckpt.extra["stats"])


def prepare(ds: Dataset, split: Split | None = None) -> tuple[Dataset, Split]:
    """Chronological split plus train-only normalization stats."""
    split = chronological_split(ds) if split is None else split
    return ds.with_stats(split.train), split


def new_state(ds: Dataset, config: TrainConfig) -> TrainState:
    if ds.stats is None:
        raise DataError("dataset has no normalization stats")
    params = init_params(config.hidden_dim, ds.d_e, ds.d_r, ds.d_a, ds.d_s, seed=config.seed)
    opt = AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    return TrainState(config=config, params=params, opt=opt, stats=ds.stats)


def epoch_order(n: int, config: TrainConfig, epoch: int) -> list[np.ndarray]:
    """Minibatches (indices into the train list) for one epoch; depends only on seed and epoch."""
    perm = np.random.default_rng([config.seed, epoch]).permutation(n)
    batches = [perm[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
    if config.steps_per_epoch is not None:
        batches = batches[: config.steps_per_epoch]
    return batches


def compute_loss(pred: Tensor, target_std: np.ndarray) -> Tensor:
    """Flat MAE over all instances, in standardized price units."""
    return mae_loss(pred, Tensor(target_std))


def train_step(inputs: ModelInputs, graph: HeteroGraph | None, state: TrainState, rows: np.ndarray) -> float:
    """One AdamW step on the MAE of standardized prices for transaction rows ``rows``."""
    params = state.params
    params.zero_grad()
    pred = forward_batch(inputs, graph, params, state.config.variant_config, rows)
    loss = compute_loss(pred, inputs.price[rows])
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite training loss at step {state.opt.step_count + 1}")
    backward(loss)
    grads = clip_gradients(params.grads(), state.config.clip)
    adamw_step(params.arrays(), grads, state.opt)
    return value


def _val_mae(inputs, graph, params, config, rows) -> float:
    pred = predict(inputs, graph, params, config.variant_config, rows, batch_size=max(config.batch_size, 256))
    return float(np.mean(np.abs(pred - inputs.ds.tx_price[rows])))


def train(
    ds: Dataset,
    graph: HeteroGraph | None,
    config: TrainConfig,
    split: Split | None = None,
    *,
    resume: TrainState | None = None,
    checkpoint_path=None,
    stop_after: int | None = None,
    progress=None,
) -> TrainResult:
    """Fit the network on the training split, selecting the epoch with the lowest validation MAE.

    ``resume`` continues a saved :class:`TrainState`; the data pipeline is a
    pure function of (seed, epoch), so a resumed run reproduces an
    uninterrupted one exactly. ``checkpoint_path`` receives the resumable
    state after every epoch. ``stop_after`` ends the run once that many epochs
    are complete (for interruption tests).
    """
    ds, split = prepare(ds, split)
    if config.variant != Variant.T_RAP.value and graph is None:
        raise DataError(f"variant {config.variant} needs the proximity graph")
    if len(split.train) == 0:
        raise DataError("empty training split")
    if resume is not None:
        if resume.config != config:
            raise ConfigError("resume checkpoint was written with a different training config")
        state = resume
        ds = ds.replace(stats=state.stats)
    else:
        state = new_state(ds, config)
    state.params.check_dims(ds.d_e, ds.d_r, ds.d_a, ds.d_s)

    inputs = ModelInputs.build(ds)
    train_rows = ds.tx_pos(split.train)
    val_rows = ds.tx_pos(split.val)
    last = config.epochs if stop_after is None else min(config.epochs, stop_after)

    while state.epoch < last:
        epoch = state.epoch
        losses, sizes = [], []
        for batch in epoch_order(len(train_rows), config, epoch):
            losses.append(train_step(inputs, graph, state, train_rows[batch]))
            sizes.append(len(batch))
        train_mae = float(np.dot(losses, sizes) / np.sum(sizes)) * state.stats.price_std
        val_mae = _val_mae(inputs, graph, state.params, config, val_rows) if len(val_rows) else None
        state.epoch = epoch + 1
        state.log.append({"epoch": state.epoch, "train_mae": train_mae, "val_mae": val_mae,
                          "steps": state.opt.step_count})
        better = val_mae is None or state.best_val_mae is None or val_mae < state.best_val_mae
        if better:
            state.best_params = state.params.copy()
            state.best_epoch = state.epoch
            state.best_val_mae = val_mae
        if checkpoint_path is not None:
            state.save(checkpoint_path)
        if progress is not None:
            progress(state.log[-1])

    best = state.best_params if state.best_params is not None else state.params
    return TrainResult(params=best, state=state, dataset=ds, split=split)


def evaluate(
    ds: Dataset,
    graph: HeteroGraph | None,
    params: ModelParams,
    ids,
    variant: VariantConfig | TrainConfig,
    batch_size: int = 256,
) -> dict:
    """Metrics report (millions of KRW / percent) for transaction ``ids``; ``ds`` must carry stats."""
    if isinstance(variant, TrainConfig):
        variant = variant.variant_config
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise DataError("cannot evaluate an empty split")
    pred = predict(ModelInputs.build(ds), graph, params, variant, ds.tx_pos(ids), batch_size=batch_size)
    return metrics_report(ds, ids, pred)


def predict_ids(ds: Dataset, graph: HeteroGraph | None, params: ModelParams, ids, variant, batch_size=256):
    if isinstance(variant, TrainConfig):
        variant = variant.variant_config
    return predict(ModelInputs.build(ds), graph, params, variant, ds.tx_pos(ids), batch_size=batch_size)
