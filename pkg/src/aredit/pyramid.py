"""Multi-scale binary spherical quantization of a feature map.

A feature map is decomposed into K bit grids, coarse to fine: at each
level the residual between the target and the running reconstruction is
downsampled, sign-quantized to +-1/sqrt(d) per channel, and added back
after upsampling to full resolution.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, ShapeMismatch
from .numerics import FeatureMap, downsample_bilinear, upsample_bilinear


@dataclass(frozen=True)
class ScaleSchedule:
    """Ordered (h_k, w_k) levels plus the shared channel count d."""

    levels: Tuple[Tuple[int, int], ...]
    feature_dim: int

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ContractViolation("schedule needs at least one level")
        if self.feature_dim < 1:
            raise ContractViolation("feature_dim must be >= 1")
        prev = (0, 0)
        for h, w in self.levels:
            if h < prev[0] or w < prev[1]:
                raise ContractViolation("levels must be non-decreasing")
            if h < 1 or w < 1:
                raise ContractViolation("levels must be positive")
            prev = (h, w)
        object.__setattr__(self, "levels", tuple((int(h), int(w)) for h, w in self.levels))

    @classmethod
    def from_sides(cls, sides: Sequence[int], feature_dim: int) -> "ScaleSchedule":
        return cls(tuple((int(s), int(s)) for s in sides), feature_dim)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def full_shape(self) -> Tuple[int, int]:
        return self.levels[-1]


DEFAULT_SCHEDULE = ScaleSchedule.from_sides((1, 2, 4, 8, 16), 32)


@dataclass(frozen=True)
class BitGrid:
    """h x w x d binary labels; bit 1 materializes to +1/sqrt(d), 0 to -1/sqrt(d)."""

    height: int
    width: int
    channels: int
    bits: np.ndarray  # (h, w, d) bool

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (self.height, self.width, self.channels):
            raise ShapeMismatch(
                f"bit shape {b.shape} != ({self.height}, {self.width}, {self.channels})"
            )
        b = np.ascontiguousarray(b)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def shape(self):
        return (self.height, self.width, self.channels)

    def materialize(self) -> FeatureMap:
        scale = np.float32(1.0 / np.sqrt(self.channels))
        vals = np.where(self.bits, scale, -scale).astype(np.float32)
        return FeatureMap(self.height, self.width, self.channels, vals)

    def packed(self) -> bytes:
        """ceil(d/8) bytes per position, channel-major, LSB-first."""
        flat = self.bits.reshape(self.height * self.width, self.channels)
        return np.packbits(flat, axis=1, bitorder="little").tobytes()

    @classmethod
    def from_packed(cls, raw: bytes, h: int, w: int, d: int) -> "BitGrid":
        per_pos = (d + 7) // 8
        expect = h * w * per_pos
        if len(raw) != expect:
            raise ShapeMismatch(f"packed length {len(raw)} != {expect}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h * w, per_pos)
        bits = np.unpackbits(arr, axis=1, count=d, bitorder="little").astype(bool)
        return cls(h, w, d, bits.reshape(h, w, d))


def quantize_bsq(z: np.ndarray) -> np.ndarray:
    """Sign-quantize a (..., d) array of residual vectors to bits.

    bit = 1 iff the component is >= 0; materialized vectors all have unit
    L2 norm since every component is +-1/sqrt(d).
    """
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise ContractViolation("quantize_bsq input contains non-finite values")
    return z >= 0.0


def quantize_grid(residual: FeatureMap) -> BitGrid:
    return BitGrid(residual.height, residual.width, residual.channels,
                   quantize_bsq(residual.data))


def accumulate(residuals: Sequence[BitGrid], schedule: ScaleSchedule, upto_k: int) -> FeatureMap:
    """Sum of the first upto_k materialized grids, upsampled to full shape."""
    if not (0 <= upto_k <= schedule.num_levels):
        raise ContractViolation(f"upto_k {upto_k} outside [0, {schedule.num_levels}]")
    full_h, full_w = schedule.full_shape
    d = schedule.feature_dim
    total = np.zeros((full_h, full_w, d), dtype=np.float32)
    for i in range(upto_k):
        r = residuals[i]
        if r.shape != (*schedule.levels[i], d):
            raise ShapeMismatch(f"residual {i} shape {r.shape} != level {schedule.levels[i]}")
        total = total + upsample_bilinear(r.materialize(), full_h, full_w).data
    return FeatureMap(full_h, full_w, d, total)


def encode_pyramid(f: FeatureMap, schedule: ScaleSchedule) -> Tuple[List[BitGrid], List[FeatureMap]]:
    """Quantize f into per-level bit grids plus next-level transformer inputs.

    Returns (residuals, inputs): residuals[k] is the level-k bit grid;
    inputs[k] is the running reconstruction after level k+1's grids,
    downsampled to level k+2's shape (the feed for predicting level k+2).
    """
    full_h, full_w = schedule.full_shape
    d = schedule.feature_dim
    if f.shape != (full_h, full_w, d):
        raise ShapeMismatch(f"feature shape {f.shape} != schedule full shape {(full_h, full_w, d)}")
    residuals: List[BitGrid] = []
    inputs: List[FeatureMap] = []
    recon = FeatureMap.zeros(full_h, full_w, d)
    for k, (h, w) in enumerate(schedule.levels):
        target_k = downsample_bilinear(f, h, w)
        recon_k = downsample_bilinear(recon, h, w)
        resid = FeatureMap(h, w, d, target_k.data - recon_k.data)
        grid = quantize_grid(resid)
        residuals.append(grid)
        recon = FeatureMap(
            full_h, full_w, d,
            recon.data + upsample_bilinear(grid.materialize(), full_h, full_w).data,
        )
        if k + 1 < schedule.num_levels:
            nh, nw = schedule.levels[k + 1]
            inputs.append(downsample_bilinear(recon, nh, nw))
    return residuals, inputs
