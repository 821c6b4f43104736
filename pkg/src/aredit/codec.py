"""Toy image <-> feature transform standing in for a learned tokenizer.

Per non-overlapping p x p patch the RGB values (0..1) are flattened and
multiplied by a fixed seeded semi-orthogonal projection; decoding applies
the transpose, clamps, and quantizes back to 8-bit. The projection's
column space always contains the three per-channel-constant directions so
flat regions survive the round trip, and those directions are mixed
across feature channels on an even circle so a flat field loads every
channel with comparable magnitude (this keeps the downstream fixed-step
residual quantizer in its useful operating range).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ShapeMismatch
from .numerics import FeatureMap, Image

DEFAULT_PATCH = 4
DEFAULT_DIM = 32
DEFAULT_CODEC_SEED = 7


def _dc_directions(p: int) -> np.ndarray:
    """Three orthonormal flat-field directions in patch-vector space."""
    n = 3 * p * p
    basis = np.zeros((n, 3), dtype=np.float64)
    for ch in range(3):
        basis[ch::3, ch] = 1.0 / p
    return basis


def _orthonormal_completion(block: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    """Extend rows of `block` (k x total, orthonormal) to a full orthogonal basis."""
    k = block.shape[0]
    cand = np.concatenate([block, rng.standard_normal((total - k, total))], axis=0)
    q, r = np.linalg.qr(cand.T)
    q = q * np.sign(np.diag(r))[None, :]
    return q.T


def _dc_mixing(d: int) -> np.ndarray:
    """3 x d rows spreading the flat-field coefficients evenly over channels.

    Row space: the luma direction at weight 1/sqrt(d) per channel plus the
    two chroma directions on a four-phase diagonal grid (45, 135, 225, 315
    degrees) at weight sqrt(2/d). Every channel carries the same luma load
    and a +-|chroma|/sqrt(2) load, so a flat field drives all channels at
    comparable magnitude. Rows are exactly orthonormal when d % 4 == 0.
    """
    if d % 4:
        raise ContractViolation("feature_dim must be a multiple of 4")
    g = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    t1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    t2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
    phases = np.deg2rad(45.0 + 90.0 * (np.arange(d) % 4))
    return (
        g[:, None] / np.sqrt(d)
        + np.sqrt(2.0 / d) * (np.cos(phases)[None, :] * t1[:, None]
                              + np.sin(phases)[None, :] * t2[:, None])
    )

@dataclass(frozen=True)
class CodecParams:
    """Fixed seeded patch projection; regenerable, never trained."""

    patch_size: int
    feature_dim: int
    projection: np.ndarray  # (3*p*p, d)
    seed: int

    def __post_init__(self):
        proj = np.asarray(self.projection, dtype=np.float32)
        n = 3 * self.patch_size * self.patch_size
        if proj.shape != (n, self.feature_dim):
            raise ShapeMismatch(f"projection shape {proj.shape} != ({n}, {self.feature_dim})")
        proj = np.ascontiguousarray(proj)
        proj.flags.writeable = False
        object.__setattr__(self, "projection", proj)

    def check_orthonormal(self, tol: float = 1e-5) -> None:
        q = self.projection.astype(np.float64)
        n, d = q.shape
        if d <= n:
            gram = q.T @ q
            eye = np.eye(d)
        else:
            gram = q @ q.T
            eye = np.eye(n)
        if not np.allclose(gram, eye, atol=tol):
            raise ContractViolation("projection is not semi-orthogonal")


def make_codec(seed: int = DEFAULT_CODEC_SEED, patch_size: int = DEFAULT_PATCH,
               feature_dim: int = DEFAULT_DIM) -> CodecParams:
    rng = np.random.default_rng(np.random.PCG64(seed))
    n = 3 * patch_size * patch_size
    d = feature_dim
    if d <= n:
        dc = _dc_directions(patch_size)  # (n, 3)
        if d < 3:
            raise ContractViolation("feature_dim must be >= 3")
        # Column space = DC + seeded random detail directions.
        cand = np.concatenate([dc, rng.standard_normal((n, d - 3))], axis=1)
        q, r = np.linalg.qr(cand)
        q = q * np.sign(np.diag(r))[None, :]  # (n, d), first 3 columns = DC
        # Rotate in feature space so DC coefficients spread over channels.
        mix_rows = _dc_mixing(d)  # (3, d)
        w = _orthonormal_completion(np.ascontiguousarray(mix_rows), d, rng)  # (d, d)
        proj = q @ w
    else:
        # More channels than patch dims: injective map, exact round trip.
        cand = rng.standard_normal((d, n))
        q, r = np.linalg.qr(cand)
        q = q * np.sign(np.diag(r))[None, :]  # (d, n) columns orthonormal
        proj = q.T  # (n, d), rows orthonormal
    return CodecParams(patch_size, d, proj.astype(np.float32), seed)


def encode_image(img: Image, params: CodecParams) -> FeatureMap:
    """Project each patch's flattened 0..1 RGB values into feature space."""
    p = params.patch_size
    if img.height % p or img.width % p:
        raise ContractViolation(
            f"image {img.height}x{img.width} not divisible by patch size {p}"
        )
    gh, gw = img.height // p, img.width // p
    x = img.pixels.astype(np.float64) / 255.0
    # (gh, gw, p*p*3) patch vectors in row-major (row, col, channel) order
    patches = (
        x.reshape(gh, p, gw, p, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh, gw, 3 * p * p)
    )
    feats = patches @ params.projection.astype(np.float64)
    return FeatureMap(gh, gw, params.feature_dim, feats.astype(np.float32))


def decode_feature(f: FeatureMap, params: CodecParams) -> Image:
    """Inverse-project features, clamp to 0..1, quantize to 8-bit RGB."""
    p = params.patch_size
    if f.channels != params.feature_dim:
        raise ContractViolation(
            f"feature channels {f.channels} != codec dim {params.feature_dim}"
        )
    y = f.data.astype(np.float64) @ params.projection.astype(np.float64).T
    pix = (
        y.reshape(f.height, f.width, p, p, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(f.height * p, f.width * p, 3)
    )
    pix = np.clip(pix, 0.0, 1.0)
    return Image.from_array(np.floor(pix * 255.0 + 0.5).astype(np.uint8))
