"""Entity tables, dataset I/O, chronological splitting and checkpoints."""

from strap.datamodel.checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from strap.datamodel.split import Split, canonical_order, chronological_split, cold_warm_partition
from strap.datamodel.tables import (
    AMENITY_KINDS,
    STATION_KINDS,
    Amenity,
    Dataset,
    HistoryIndex,
    NormStats,
    Resident,
    Station,
    TransactionEvent,
    load_dataset,
    make_dataset,
    save_dataset,
    validate_dataset,
)

__all__ = [
    "AMENITY_KINDS",
    "Amenity",
    "Checkpoint",
    "Dataset",
    "FORMAT_VERSION",
    "HistoryIndex",
    "NormStats",
    "Resident",
    "STATION_KINDS",
    "Split",
    "Station",
    "TransactionEvent",
    "canonical_order",
    "chronological_split",
    "cold_warm_partition",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "load_dataset",
    "make_dataset",
    "save_checkpoint",
    "save_dataset",
    "validate_dataset",
]
