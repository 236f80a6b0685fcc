"""Morton (Z-order) codes for 3D points.

Interleaving the bits of quantized coordinates yields a one-dimensional key
that preserves spatial locality far better than any single axis, which is
what the segmented assignment solver sorts by.
"""

from __future__ import annotations

import numpy as np

BITS_PER_AXIS = 21  # 3 * 21 = 63 bits, fits uint64


def _spread_bits(x):
    """Insert two zero bits between the low 21 bits of each value."""
    x = x.astype(np.uint64)
    x = (x | (x << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    x = (x | (x << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    x = (x | (x << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    x = (x | (x << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    x = (x | (x << np.uint64(2))) & np.uint64(0x1249249249249249)
    return x


def quantize(points, lo, hi, bits=BITS_PER_AXIS):
    """Map points inside [lo, hi] to integer cells in [0, 2**bits)."""
    points = np.asarray(points, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    span = np.asarray(hi, dtype=np.float64) - lo
    span = np.where(span > 0, span, 1.0)
    frac = (points - lo) / span
    cells = np.floor(frac * (1 << bits)).astype(np.int64)
    return np.clip(cells, 0, (1 << bits) - 1).astype(np.uint64)


def morton_codes(points, lo, hi, bits=BITS_PER_AXIS):
    """Z-order key per point; x occupies the least significant interleave slot."""
    cells = quantize(points, lo, hi, bits)
    return (_spread_bits(cells[:, 0])
            | (_spread_bits(cells[:, 1]) << np.uint64(1))
            | (_spread_bits(cells[:, 2]) << np.uint64(2)))


def morton_order(points, lo, hi, bits=BITS_PER_AXIS):
    """Indices sorting points by Morton code, ties broken by original index."""
    return np.argsort(morton_codes(points, lo, hi, bits), kind="stable")
