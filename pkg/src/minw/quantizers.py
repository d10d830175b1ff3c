"""Binary, ternary and power-of-two quantization functions.

Level sets per bit-width::

    1 bit   {-1, +1}
    2 bits  {-1, 0, +1}
    3 bits  {-1, -1/2, -1/4, 0, 1/4, 1/2, 1}

Multi-bit quantizers map a value to a level by comparing ``|a|`` against a
sorted set of positive thresholds; a value sitting exactly on a threshold
goes to the inner (smaller-magnitude) level.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SUPPORTED_BITS = (1, 2, 3)


@dataclass(frozen=True)
class Codebook:
    bits: int
    levels: tuple
    q: int

    def magnitudes(self):
        """Non-negative levels in increasing order (0 included for n >= 2)."""
        return tuple(v for v in self.levels if v >= 0)

    def contains(self, values):
        return np.isin(np.asarray(values), np.asarray(self.levels, dtype=np.float64))


@dataclass(frozen=True)
class ThresholdSet:
    deltas: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in self.deltas)
        object.__setattr__(self, "deltas", d)
        if not d:
            raise ConfigError("threshold set is empty")
        if any(not (0.0 < v <= 1.0) for v in d):
            raise ConfigError(f"thresholds must lie in (0, 1], got {d}")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError(f"thresholds must be strictly increasing, got {d}")

    def __len__(self):
        return len(self.deltas)


def build_codebook(bits):
    if bits == 1:
        return Codebook(1, (-1.0, 1.0), 0)
    if bits == 2:
        return Codebook(2, (-1.0, 0.0, 1.0), 1)
    if bits == 3:
        mags = (0.25, 0.5, 1.0)
        levels = tuple(-m for m in reversed(mags)) + (0.0,) + mags
        return Codebook(3, levels, 3)
    raise ConfigError(f"unsupported bit-width {bits}; expected one of {SUPPORTED_BITS}")


def default_thresholds(bits):
    """Midpoints between consecutive non-negative levels (None for 1 bit)."""
    if bits == 1:
        return None
    mags = build_codebook(bits).magnitudes()
    return ThresholdSet(tuple((a + b) / 2 for a, b in zip(mags, mags[1:])))


def check_thresholds(cb, thresholds):
    """Reject threshold sets that would not leave every level in its own band."""
    if cb.bits == 1:
        return None
    if thresholds is None:
        return default_thresholds(cb.bits)
    if len(thresholds) != cb.q:
        raise ConfigError(
            f"{cb.bits}-bit codebook needs {cb.q} threshold(s), got {len(thresholds)}"
        )
    mags = cb.magnitudes()
    edges = (0.0,) + thresholds.deltas + (np.inf,)
    for i, m in enumerate(mags):
        if not (edges[i] < m <= edges[i + 1]) and not (i == 0 and m == 0.0):
            raise ConfigError(
                f"thresholds {thresholds.deltas} put level {m} outside its band"
            )
    return thresholds


def quantize_binary(a):
    a = np.asarray(a)
    one = a.dtype.type(1) if a.dtype.kind == "f" else 1.0
    return np.where(a > 0, one, -one)


def quantize_ternary(a, delta):
    if delta is None or len(delta) != 1:
        raise ConfigError("ternary quantization needs exactly one threshold")
    a = np.asarray(a)
    d = delta.deltas[0]
    return np.where(np.abs(a) <= d, 0, np.sign(a)).astype(a.dtype, copy=False)


def quantize_pow2(a, deltas, cb):
    if cb.bits != 3:
        raise ConfigError(f"power-of-two quantizer needs a 3-bit codebook, got {cb.bits}")
    if deltas is None or len(deltas) != cb.q:
        got = 0 if deltas is None else len(deltas)
        raise ConfigError(f"power-of-two quantizer needs {cb.q} thresholds, got {got}")
    a = np.asarray(a)
    mags = np.asarray(cb.magnitudes(), dtype=a.dtype)
    band = np.searchsorted(np.asarray(deltas.deltas, dtype=np.float64),
                           np.abs(a).astype(np.float64), side="left")
    return (np.sign(a) * mags[band]).astype(a.dtype, copy=False)


def quantize(a, cb, thresholds=None):
    """The quantizer for ``cb``; ``thresholds`` default to level midpoints."""
    if cb.bits == 1:
        return quantize_binary(a)
    if thresholds is None:
        thresholds = default_thresholds(cb.bits)
    if cb.bits == 2:
        return quantize_ternary(a, thresholds)
    return quantize_pow2(a, thresholds, cb)


def nearest_level(a, cb):
    """Closest codebook level; ties go to the level of larger magnitude."""
    best = None
    for level in cb.levels:
        d = abs(a - level)
        if best is None or d < best[0] or (d == best[0] and abs(level) > abs(best[1])):
            best = (d, level)
    return best[1]
