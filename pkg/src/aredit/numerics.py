"""Dense grids and the resampling/probability primitives everything builds on.

All grid values are float32 internally; reductions that need headroom go
through float64. Values are immutable after construction (arrays are
flagged non-writeable) so grids can be shared across threads freely.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ShapeMismatch
from .kernels import resample_bilinear, uniform_scalar


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureMap:
    """A height x width x channels grid of float32 values, row-major."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.shape != (self.height, self.width, self.channels):
            raise ShapeMismatch(
                f"data shape {d.shape} != ({self.height}, {self.width}, {self.channels})"
            )
        if not np.all(np.isfinite(d)):
            raise ContractViolation("FeatureMap contains non-finite values")
        object.__setattr__(self, "data", _freeze(d))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FeatureMap":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatch(f"expected rank-3 array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], arr)

    @classmethod
    def zeros(cls, h: int, w: int, c: int) -> "FeatureMap":
        return cls(h, w, c, np.zeros((h, w, c), dtype=np.float32))

    @property
    def shape(self):
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class Image:
    """8-bit RGB raster."""

    height: int
    width: int
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.shape != (self.height, self.width, 3):
            raise ShapeMismatch(
                f"pixel shape {p.shape} != ({self.height}, {self.width}, 3)"
            )
        object.__setattr__(self, "pixels", _freeze(p))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(arr.shape[0], arr.shape[1], arr)


def upsample_bilinear(src: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    """Enlarge with half-pixel-center bilinear interpolation."""
    if target_h < src.height or target_w < src.width:
        raise ContractViolation(
            f"upsample cannot shrink: {src.height}x{src.width} -> {target_h}x{target_w}"
        )
    if (target_h, target_w) == (src.height, src.width):
        return src
    out = resample_bilinear(src.data, target_h, target_w)
    return FeatureMap(target_h, target_w, src.channels, out)


def downsample_bilinear(src: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    """Reduce with half-pixel-center bilinear interpolation."""
    if target_h > src.height or target_w > src.width:
        raise ContractViolation(
            f"downsample cannot grow: {src.height}x{src.width} -> {target_h}x{target_w}"
        )
    if (target_h, target_w) == (src.height, src.width):
        return src
    out = resample_bilinear(src.data, target_h, target_w)
    return FeatureMap(target_h, target_w, src.channels, out)


@dataclass
class CounterRng:
    """Counter-based RNG state: hash of (seed, stream, counter) per draw.

    Draws are independent of call order elsewhere; copying the state and
    replaying gives bit-identical sequences.
    """

    seed: int
    stream: int = 0
    counter: int = field(default=0)

    def next_uniform(self) -> float:
        u = uniform_scalar(self.seed, self.stream, self.counter)
        self.counter += 1
        return u


def tempered_p_plus(p_plus: float, temperature: float) -> float:
    """Probability of the positive bit after temperature sharpening."""
    if temperature == 1.0:
        return p_plus
    a = p_plus ** (1.0 / temperature)
    b = (1.0 - p_plus) ** (1.0 / temperature)
    return a / (a + b)


def bernoulli_sample(p_plus: float, temperature: float, rng_state: CounterRng) -> int:
    """Draw one bit: 1 with probability p+^(1/T) / (p+^(1/T) + p-^(1/T))."""
    if not (0.0 <= p_plus <= 1.0) or not np.isfinite(p_plus):
        raise ContractViolation(f"p_plus {p_plus} outside [0, 1]")
    if not (temperature > 0.0) or not np.isfinite(temperature):
        raise ContractViolation(f"temperature {temperature} must be > 0")
    if p_plus == 1.0:
        return 1
    if p_plus == 0.0:
        return 0
    q = tempered_p_plus(float(p_plus), float(temperature))
    return 1 if rng_state.next_uniform() < q else 0
