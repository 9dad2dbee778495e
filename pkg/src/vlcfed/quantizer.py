"""Unbiased scalar quantizers (PQ and QSGD) and their analytic error models.

Both quantizers map a block of values to y-bit centroid IDs:

* PQ spreads ``2^y`` centroids uniformly over the block's [min, max] range and
  stochastically rounds each value to one of its two bracketing centroids.
* QSGD spends 1 bit on the sign and ``y - 1`` bits on a magnitude level drawn
  from a uniform grid over [0, l2_norm], again with stochastic rounding.
  At ``y = 1`` there is no room for a level: the single bit is the sign and
  the decoded magnitude is ``l2_norm / sqrt(n)``.  That special case is
  deterministic and therefore not unbiased; every other configuration is.

``quant_error_model`` gives the analytic bound ``Q`` such that the expected
squared quantization error is at most ``Q * ||block||^2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidBits, InvalidInput


class QuantizerKind(enum.Enum):
    PQ = 0
    QSGD = 1

    @classmethod
    def parse(cls, name: str) -> "QuantizerKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise InvalidInput(f"unknown quantizer kind: {name!r}") from None


@dataclass(frozen=True)
class PqMeta:
    """Block min/max; the 2^y centroids are uniform on [lo, hi]."""

    lo: float
    hi: float


@dataclass(frozen=True)
class QsgdMeta:
    """Block L2 norm; magnitude levels are uniform on [0, l2_norm]."""

    l2_norm: float


CentroidMeta = Union[PqMeta, QsgdMeta]


@dataclass(frozen=True)
class QuantizedBlock:
    kind: QuantizerKind
    y: int
    cids: np.ndarray
    meta: CentroidMeta


def _rng_from_seed(rng_seed) -> np.random.Generator:
    # Philox is counter-based: the same seed material reproduces the same
    # stream on any platform.
    if isinstance(rng_seed, np.random.SeedSequence):
        seq = rng_seed
    else:
        seq = np.random.SeedSequence(rng_seed)
    return np.random.Generator(np.random.Philox(seq))


def _check_bits(y: int) -> int:
    y = int(y)
    if not 1 <= y <= 32:
        raise InvalidBits(f"code length must be in [1, 32], got {y}")
    return y


def _stochastic_round(scaled: np.ndarray, n_gaps: int, rng: np.random.Generator) -> np.ndarray:
    """Round each value in [0, n_gaps] to a bracketing integer, unbiased."""
    base = np.minimum(np.floor(scaled), n_gaps - 1)
    frac = scaled - base
    up = rng.random(scaled.size) < frac
    return (base + up).astype(np.int64)


def quantize(kind: QuantizerKind, values, y: int, rng_seed, meta: CentroidMeta | None = None) -> QuantizedBlock:
    """Quantize a block of values to y-bit centroid IDs.

    ``meta`` may be supplied to pin the centroid grid (e.g. to the exact
    float32 values that will travel in the packet header); by default it is
    computed from the block.
    """
    y = _check_bits(y)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput("quantize needs a non-empty 1-D block")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("quantize got non-finite values")
    rng = _rng_from_seed(rng_seed)

    if kind is QuantizerKind.PQ:
        if meta is None:
            meta = PqMeta(lo=float(arr.min()), hi=float(arr.max()))
        lo, hi = meta.lo, meta.hi
        if hi <= lo:
            # Degenerate range: single centroid at lo.
            cids = np.zeros(arr.size, dtype=np.uint32)
            return QuantizedBlock(kind=kind, y=y, cids=cids, meta=meta)
        n_gaps = (1 << y) - 1
        scaled = (arr - lo) / (hi - lo) * n_gaps
        scaled = np.clip(scaled, 0.0, float(n_gaps))
        cids = _stochastic_round(scaled, n_gaps, rng).astype(np.uint32)
        return QuantizedBlock(kind=kind, y=y, cids=cids, meta=meta)

    if meta is None:
        meta = QsgdMeta(l2_norm=float(np.linalg.norm(arr)))
    norm = meta.l2_norm
    if norm < 0:
        raise InvalidInput("l2_norm must be non-negative")
    # Sign bit: 1 encodes a +1 multiplier, 0 encodes -1.
    sign_bit = (arr >= 0).astype(np.int64)
    if y == 1:
        cids = sign_bit.astype(np.uint32)
        return QuantizedBlock(kind=kind, y=y, cids=cids, meta=meta)
    n_levels = (1 << (y - 1)) - 1
    if norm == 0.0:
        levels = np.zeros(arr.size, dtype=np.int64)
    else:
        scaled = np.clip(np.abs(arr) / norm * n_levels, 0.0, float(n_levels))
        levels = _stochastic_round(scaled, n_levels, rng)
    cids = ((sign_bit << (y - 1)) | levels).astype(np.uint32)
    return QuantizedBlock(kind=kind, y=y, cids=cids, meta=meta)


def dequantize(block: QuantizedBlock) -> np.ndarray:
    """Reconstruct real values from a quantized block."""
    y = _check_bits(block.y)
    cids = np.asarray(block.cids, dtype=np.uint64)
    if cids.size == 0:
        raise InvalidInput("dequantize needs a non-empty block")
    if np.any(cids >> np.uint64(y)):
        raise InvalidInput("centroid ID does not fit the code length")

    if block.kind is QuantizerKind.PQ:
        lo, hi = block.meta.lo, block.meta.hi
        if hi <= lo:
            return np.full(cids.size, lo, dtype=np.float64)
        n_gaps = (1 << y) - 1
        return lo + cids.astype(np.float64) * (hi - lo) / n_gaps

    norm = block.meta.l2_norm
    if y == 1:
        mult = np.where(cids == 1, 1.0, -1.0)
        return mult * (norm / math.sqrt(cids.size))
    n_levels = (1 << (y - 1)) - 1
    levels = (cids & np.uint64(n_levels)).astype(np.float64)
    mult = np.where(cids >> np.uint64(y - 1) == 1, 1.0, -1.0)
    return mult * levels * norm / n_levels


def quant_error_model(kind: QuantizerKind, z, y) -> float:
    """Analytic quantization-error coefficient Q(z, y).

    PQ:   z / (2^y - 1)^2
    QSGD: min(z / 2^(2y), sqrt(z) / 2^y)

    ``y`` may be fractional; the optimizer only ever passes integers but the
    analytic form is defined for real code lengths as well.
    """
    if z < 1:
        raise InvalidInput(f"block size must be >= 1, got {z}")
    if not 1 <= y <= 32:
        raise InvalidBits(f"code length must be in [1, 32], got {y}")
    if kind is QuantizerKind.PQ:
        return float(z) / (2.0**y - 1.0) ** 2
    return min(float(z) / 2.0 ** (2.0 * y), math.sqrt(z) / 2.0**y)
