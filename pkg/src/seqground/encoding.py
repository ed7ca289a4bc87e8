"""Sinusoidal position encodings normalized by sequence length."""
import math

import numpy as np

from .types import ConfigError


def normalized_pe(length, dim, dtype=np.float64):
    """(length, dim) encoding whose row ``i`` depends only on ``i / length``.

    Columns ``2t`` and ``2t + 1`` hold sin and cos of
    ``2*pi*(i/length) / 10000**(2t/dim)``.
    """
    if dim % 2:
        raise ConfigError(f"positional encoding width must be even, got {dim}", field="dim")
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}", field="length")
    # i / length first: correctly rounded division makes equal ratios bit-identical
    progress = np.arange(length, dtype=np.float64) / float(length)
    freq = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    angle = (2.0 * math.pi * progress)[:, None] / freq[None, :]
    out = np.empty((length, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out.astype(dtype, copy=False)


def progress_encoding(index, length, dim):
    """Encoding of a single position; equals ``normalized_pe(length, dim)[index]``."""
    if not 0 <= index < length:
        raise IndexError(f"index {index} outside [0, {length})")
    return normalized_pe(length, dim)[index]
