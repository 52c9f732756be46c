"""AdamW with decoupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from strap.errors import ConfigError, DimensionError, NumericalError

# relative slack on the clipping threshold; makes clipping idempotent under rounding
_CLIP_RTOL = 1e-12


def global_norm(grads: dict[str, np.ndarray]) -> float:
    sq = 0.0
    for g in grads.values():
        sq += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(sq)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients by ``max_norm / norm`` when their joint L2 norm exceeds ``max_norm``."""
    if not max_norm > 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm * (1.0 + _CLIP_RTOL):
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError(f"bad AdamW hyperparameters lr={self.lr} eps={self.eps} wd={self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"AdamW betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    def hyper(self) -> dict[str, float]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
        }


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState) -> None:
    """Update ``params`` and ``state`` in place by one AdamW step.

    Parameters without a gradient entry are left alone (their moments are not
    advanced either).
    """
    state.validate()
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * update
