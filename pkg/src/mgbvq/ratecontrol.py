"""Quad-tree bookkeeping and rate/distortion arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .entropy import BitReader
from .errors import CorruptStreamError, InvalidInputError

DEFAULT_MSETH = 70.0


@dataclass
class QuadTree:
    """Early-termination flags, one array per level in level order.

    Level 0 holds the single "split the whole block" flag.  Level ``L`` holds
    four raster-ordered child flags for every 1-flag at level ``L - 1``;
    a child flagged 1 is quantized at that level.
    """

    levels: list[np.ndarray]
    base_side: int

    def __post_init__(self):
        self.levels = [np.asarray(l, dtype=np.uint8).ravel() for l in self.levels]
        if not self.levels or len(self.levels[0]) != 1:
            raise InvalidInputError("level 0 must hold exactly one flag")
        for L in range(1, len(self.levels)):
            want = 4 * int(self.levels[L - 1].sum())
            if len(self.levels[L]) != want:
                raise InvalidInputError(f"level {L} has {len(self.levels[L])} flags, expected {want}")

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def nbits(self) -> int:
        return sum(len(l) for l in self.levels)

    def __eq__(self, other):
        return (
            isinstance(other, QuadTree)
            and self.base_side == other.base_side
            and len(self.levels) == len(other.levels)
            and all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels))
        )


def serialize_quadtree(qt: QuadTree) -> list[int]:
    return [int(b) for level in qt.levels for b in level]


def read_quadtree(reader: BitReader, base_side: int, depth: int) -> QuadTree:
    levels = [np.array(reader.read_flags(1), dtype=np.uint8)]
    for _ in range(1, depth):
        ones = int(levels[-1].sum())
        levels.append(np.array(reader.read_flags(4 * ones), dtype=np.uint8))
    return QuadTree(levels, base_side)


def deserialize_quadtree(bits, base_side: int, depth: int) -> QuadTree:
    bits = [int(b) for b in bits]
    if any(b not in (0, 1) for b in bits):
        raise CorruptStreamError("quad-tree bits must be 0 or 1")
    reader = BitReader(b"")
    reader.bits = bits
    qt = read_quadtree(reader, base_side, depth)
    if reader.remaining:
        raise CorruptStreamError(f"{reader.remaining} trailing quad-tree bits")
    return qt


def grid_cost_scale(n: int, N: int) -> float:
    """bpp at grid ``G_N`` of spending one bit per pixel at grid ``G_n``."""
    if n > N:
        raise InvalidInputError(f"grid {n} is finer than the top grid {N}")
    return 4.0 ** (n - N)


def bit_efficiency(delta_mse: float, delta_bpp: float) -> float:
    if not delta_bpp > 0:
        raise InvalidInputError("delta_bpp must be positive")
    return delta_mse / delta_bpp


def mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(m: float, peak: float = 255.0) -> float:
    if m <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    mse: float

    @property
    def psnr(self) -> float:
        return psnr_from_mse(self.mse)
