"""Bit-plane packing and integer dot-product kernels.

Elements are packed along the last axis, 64 per ``uint64`` word, element
``i`` at bit ``i % 64`` of word ``i // 64``. Planes:

* ``sign``  bit set for positive values (0 for zeros and padding)
* ``mask``  bit set for non-zero values (absent for 1-bit tensors)
* ``shift_lo``/``shift_hi``  2-bit code per element for 3-bit tensors:
  exponent p of ``2**-p`` in {0, 1, 2}, or 3 for zero

Dot products count disagreements with XOR. ``n - 2 * popcount(x ^ w)`` is the
same number as ``2 * popcount(~(x ^ w)) - n`` over the valid bits, but zero
tail bits cancel under XOR, so no tail masking is needed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, EncodingError
from .quantizers import build_codebook

WORD = 64
SHIFT_SCALE_BITS = 4   # worst exponent sum is 2 + 2
ZERO_CODE = 3


@dataclass
class BitPlaneTensor:
    shape: tuple
    bits: int
    sign: np.ndarray
    mask: np.ndarray = None
    shift_lo: np.ndarray = None
    shift_hi: np.ndarray = None

    @property
    def n(self):
        return self.shape[-1]

    def planes(self):
        out = {"sign": self.sign}
        for name in ("mask", "shift_lo", "shift_hi"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out


def _pack_bits(bits):
    """Pack a boolean array along its last axis into little-endian uint64 words."""
    n = bits.shape[-1]
    words = -(-n // WORD)
    padded = np.zeros(bits.shape[:-1] + (words * WORD,), dtype=np.uint8)
    padded[..., :n] = bits
    by = np.packbits(padded, axis=-1, bitorder="little")
    return np.ascontiguousarray(by).view("<u8")


def _unpack_bits(words, n):
    by = np.ascontiguousarray(words).view(np.uint8)
    return np.unpackbits(by, axis=-1, bitorder="little")[..., :n].astype(bool)


def pack_tensor(t, cb):
    """Encode a codebook-valued tensor into bit planes."""
    t = np.asarray(t)
    if t.ndim == 0:
        t = t.reshape(1)
    levels = np.asarray(cb.levels, dtype=np.float64)
    ok = np.isin(t.astype(np.float64), levels)
    if not ok.all():
        i = int(np.flatnonzero(~ok.ravel())[0])
        raise EncodingError(f"value {t.ravel()[i]!r} at flat index {i} is not a "
                            f"{cb.bits}-bit codebook level")
    out = BitPlaneTensor(t.shape, cb.bits, _pack_bits(t > 0))
    if cb.bits >= 2:
        out.mask = _pack_bits(t != 0)
    if cb.bits == 3:
        mag = np.abs(t.astype(np.float64))
        code = np.full(t.shape, ZERO_CODE, dtype=np.uint8)
        nz = mag > 0
        code[nz] = np.rint(-np.log2(mag[nz])).astype(np.uint8)
        out.shift_lo = _pack_bits(code & 1)
        out.shift_hi = _pack_bits(code >> 1)
    return out


def unpack_tensor(bt, dtype=np.float32):
    n = bt.n
    sign = np.where(_unpack_bits(bt.sign, n), 1.0, -1.0)
    if bt.bits == 1:
        return sign.astype(dtype).reshape(bt.shape)
    mask = _unpack_bits(bt.mask, n)
    if bt.bits == 2:
        return (sign * mask).astype(dtype).reshape(bt.shape)
    code = _unpack_bits(bt.shift_lo, n).astype(np.int64) | (_unpack_bits(bt.shift_hi, n).astype(np.int64) << 1)
    mag = np.where(mask, 2.0 ** -np.minimum(code, 2), 0.0)
    return (sign * mag).astype(dtype).reshape(bt.shape)


def _popcount(words):
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


def _active(bt):
    """Mask plane, or all valid bits for 1-bit tensors."""
    if bt.mask is not None:
        return bt.mask
    return _pack_bits(np.ones(bt.shape, dtype=bool))


def _exponent_planes(bt):
    """Per-exponent membership planes ``{p: words}`` restricted to non-zero elements."""
    active = _active(bt)
    if bt.bits < 3:
        return {0: active}
    lo, hi = bt.shift_lo, bt.shift_hi
    return {0: active & ~lo & ~hi, 1: active & lo & ~hi, 2: active & ~lo & hi}


def _check_len(x, w, n):
    if x.n != w.n or x.n != n:
        raise DimensionError(f"dot length mismatch: x has {x.n}, w has {w.n}, n={n}")


def xnor_dot(x, w, n):
    """Dot product of two ±1 vectors: agreements minus disagreements."""
    _check_len(x, w, n)
    if x.bits != 1 or w.bits != 1:
        raise ConfigError("xnor_dot needs 1-bit operands")
    return n - 2 * _popcount(x.sign ^ w.sign)


def ternary_dot(x, w, n):
    """Dot product for {-1, 0, +1} operands (1-bit operands have no zeros)."""
    _check_len(x, w, n)
    if x.bits > 2 or w.bits > 2:
        raise ConfigError("ternary_dot needs 1- or 2-bit operands")
    active = _active(x) & _active(w)
    return _popcount(active) - 2 * _popcount((x.sign ^ w.sign) & active)


def shift_dot_scaled(x, w):
    """Dot product scaled by ``2**SHIFT_SCALE_BITS``, as an exact integer."""
    ex, ew = _exponent_planes(x), _exponent_planes(w)
    diff = x.sign ^ w.sign
    acc = 0
    for px, plx in ex.items():
        for pw, plw in ew.items():
            both = plx & plw
            term = _popcount(both) - 2 * _popcount(diff & both)
            acc = acc + (term << (SHIFT_SCALE_BITS - px - pw))
    return acc


def shift_dot(x, w, n):
    """Dot product where at least one operand holds powers of two (exact dyadic result)."""
    _check_len(x, w, n)
    if max(x.bits, w.bits) != 3:
        raise ConfigError("shift_dot needs at least one 3-bit operand")
    return shift_dot_scaled(x, w) / float(1 << SHIFT_SCALE_BITS)


def packed_dot(x, w):
    """Dispatch to the right kernel by operand widths; broadcasts over leading axes."""
    n = x.n
    if max(x.bits, w.bits) == 3:
        return shift_dot(x, w, n)
    if x.bits == 1 and w.bits == 1:
        return xnor_dot(x, w, n)
    return ternary_dot(x, w, n)


def inference_operation(bits_w, bits_a):
    """Operation and accumulator precision labels: the smaller width picks the operation."""
    for b in (bits_w, bits_a):
        build_codebook(b)
    op = "SHIFT" if min(bits_w, bits_a) == 3 else "XNOR"
    precision = "2-bit fixed" if max(bits_w, bits_a) == 3 else "1-bit fixed"
    return op, precision


def packed_matmul(x, w, chunk=4096):
    """All-pairs dot products between packed rows of ``x`` (P×n) and ``w`` (O×n).

    Returns a float64 P×O array; every entry is exact.
    """
    if x.n != w.n:
        raise DimensionError(f"packed_matmul length mismatch: {x.shape} vs {w.shape}")
    p = x.shape[0]
    out = np.empty((p, w.shape[0]), dtype=np.float64)
    wb = BitPlaneTensor((1,) + w.shape, w.bits,
                        **{k: v[None] for k, v in w.planes().items()})
    for start in range(0, p, chunk):
        sl = slice(start, min(start + chunk, p))
        xb = BitPlaneTensor((sl.stop - sl.start, 1, x.n), x.bits,
                            **{k: v[sl, None] for k, v in x.planes().items()})
        out[sl] = packed_dot(xb, wb)
    return out
