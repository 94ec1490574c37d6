"""Uniform feature resampling used to manufacture negative views."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    p_resample: float = 0.5
    b: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_resample <= 1.0:
            raise ConfigError(f"p_resample must lie in (0, 1], got {self.p_resample}")
        if not self.b > 0.0:
            raise ConfigError(f"b must be positive, got {self.b}")


def stream_generator(seed, stream_position):
    """Counter-based generator keyed by ``(seed, stream_position)``."""
    key = [seed % 2**64, stream_position % 2**64]
    return np.random.Generator(np.random.Philox(key=key))


def augment(batch, config, stream_position):
    """Replace each entry with a ``Uniform(-b, b)`` draw with probability ``p_resample``.

    Untouched entries are copied bit for bit. The result depends only on
    ``(batch, config, stream_position)``.
    """
    x = np.asarray(batch)
    rng = stream_generator(config.seed, stream_position)
    mask = rng.random(x.shape) < config.p_resample
    draws = rng.uniform(-config.b, config.b, size=x.shape)
    return np.where(mask, draws.astype(x.dtype), x)
