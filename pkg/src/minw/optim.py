"""ADAM with per-epoch exponential learning-rate decay and weight clipping."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .layers import _Quantized


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    decay_rate: float = 0.98
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 < self.decay_rate <= 1.0):
            raise ConfigError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")

    def lr_at(self, epoch):
        return self.learning_rate * self.decay_rate ** epoch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_update(model, grads, state, cfg, epoch=0):
    """One ADAM step over every parameter, then clip quantized weights to [-1, 1].

    Raises ``NumericError`` before touching anything if a gradient is not finite.
    """
    params = list(model.named_parameters())
    for key, _, _, value in params:
        g = grads.get(key)
        if g is None or g.shape != value.shape:
            raise ConfigError(f"gradient for {key} missing or mis-shaped")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key}")

    state.step += 1
    t = state.step
    lr = cfg.lr_at(epoch)
    b1, b2 = cfg.beta1, cfg.beta2
    for key, layer, pname, value in params:
        g = grads[key]
        m = state.m.setdefault(key, np.zeros_like(value))
        v = state.v.setdefault(key, np.zeros_like(value))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        value -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(value.dtype)
        if isinstance(layer, _Quantized) and pname == "weight":
            np.clip(value, -1, 1, out=value)
    model.version += 1
    return model, state
