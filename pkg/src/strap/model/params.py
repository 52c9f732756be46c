"""Learnable parameters of the appraisal network and the variant switch."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from strap.errors import ConfigError, DataError
from strap.numerics import GruParams, Tensor


class Variant(str, enum.Enum):
    ST_RAP = "st_rap"
    S_RAP = "s_rap"  # static features only: history codes forced to zero, graph kept
    T_RAP = "t_rap"  # history only: graph aggregation bypassed

    @classmethod
    def parse(cls, value) -> Variant:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise ConfigError(f"unknown variant {value!r}; choose one of {[v.value for v in cls]}") from None


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant = Variant.ST_RAP
    hidden_dim: int = 64
    history_len: int | None = 30  # None keeps the full history

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.history_len is not None and self.history_len < 1:
            raise ConfigError(f"history_len must be >= 1 or None, got {self.history_len}")


def param_shapes(d_h: int, d_e: int, d_r: int, d_a: int, d_s: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "E_p.W": (d_h, 1), "E_p.b": (d_h,),
        "E_ef.W": (d_h, d_e), "E_ef.b": (d_h,),
        "E_rf.W": (d_h, d_r), "E_rf.b": (d_h,),
        "E_a.W": (d_h, d_a), "E_a.b": (d_h,),
        "E_s.W": (d_h, d_s), "E_s.b": (d_h,),
    }
    for gate in "zrn":
        shapes[f"gru.W_{gate}"] = (d_h, d_h)
    for gate in "zrn":
        shapes[f"gru.U_{gate}"] = (d_h, d_h)
    for gate in "zrn":
        shapes[f"gru.b_{gate}"] = (d_h,)
    for rel in "ras":
        shapes[f"hgnn.W_{rel}r"] = (d_h, d_h)
        shapes[f"hgnn.W_{rel}v"] = (d_h, d_h)
        shapes[f"hgnn.W_v{rel}"] = (d_h, d_h)
        shapes[f"hgnn.b_{rel}r"] = (d_h,)
    shapes.update({"head.W_xh": (d_h, d_h), "head.b_xh": (d_h,), "head.W_hp": (1, d_h), "head.b_hp": (1,)})
    return shapes


class ModelParams:
    """Named parameter tensors, in a fixed insertion order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def hidden_dim(self) -> int:
        return self.tensors["head.W_xh"].shape[0]

    @property
    def gru(self) -> GruParams:
        t = self.tensors
        return GruParams(*(t[f"gru.{k}_{g}"] for k in "WUb" for g in "zrn"))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self.tensors.items() if t.grad is not None}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> ModelParams:
        return ModelParams.from_arrays({k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> ModelParams:
        return cls({k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in arrays.items()})

    def check_dims(self, d_e: int, d_r: int, d_a: int, d_s: int) -> None:
        want = param_shapes(self.hidden_dim, d_e, d_r, d_a, d_s)
        if set(want) != set(self.tensors):
            missing = sorted(set(want) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(want))
            raise DataError(f"parameter set mismatch; missing {missing}, unexpected {extra}")
        for k, shape in want.items():
            if self.tensors[k].shape != shape:
                raise DataError(f"parameter {k} has shape {self.tensors[k].shape}, expected {shape}")


def init_params(d_h: int, d_e: int, d_r: int, d_a: int, d_s: int, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, fixed draw order."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(d_h, d_e, d_r, d_a, d_s).items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1]) if shape[1] else 0.0
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams.from_arrays(arrays)


def zero_params(d_h: int, d_e: int, d_r: int, d_a: int, d_s: int) -> ModelParams:
    return ModelParams.from_arrays({k: np.zeros(s) for k, s in param_shapes(d_h, d_e, d_r, d_a, d_s).items()})
