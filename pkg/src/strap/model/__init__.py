"""The appraisal network: ops, batched forward pass, training and evaluation."""

from strap.model.forward import ModelInputs, forward_batch, predict, resident_codes, strap_forward
from strap.model.ops import (
    PredictionTask,
    Standardizer,
    build_state,
    embed_amenity,
    embed_features,
    embed_station,
    embed_transaction,
    encode_history,
    hgnn_aggregate,
    make_task,
    predict_price,
    relation_message,
    resident_embedding,
)
from strap.model.params import ModelParams, Variant, VariantConfig, init_params, param_shapes, zero_params
from strap.model.train import (
    TrainConfig,
    TrainResult,
    TrainState,
    compute_loss,
    evaluate,
    load_model,
    predict_ids,
    prepare,
    save_model,
    train,
)

__all__ = [
    "ModelInputs",
    "ModelParams",
    "PredictionTask",
    "Standardizer",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "Variant",
    "VariantConfig",
    "build_state",
    "compute_loss",
    "embed_amenity",
    "embed_features",
    "embed_station",
    "embed_transaction",
    "encode_history",
    "evaluate",
    "forward_batch",
    "hgnn_aggregate",
    "init_params",
    "load_model",
    "make_task",
    "param_shapes",
    "predict",
    "predict_ids",
    "predict_price",
    "prepare",
    "relation_message",
    "resident_codes",
    "resident_embedding",
    "save_model",
    "strap_forward",
    "train",
    "zero_params",
]
