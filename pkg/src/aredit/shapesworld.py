"""Procedural captioned-shape corpus: one hard-edged shape on a flat background.

The eight palette colors sit at matched lightness rings whose projected
feature loads land on the residual quantizer's reachable levels, so flat
regions reconstruct exactly. Backgrounds use the four light colors (every
scene keeps object contrast and a clean low-frequency field); objects may
take any palette color other than the background's.
"""

import json
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ContractViolation
from .numerics import Image

_G = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
_T1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_T2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)


def _cone(l: float, chi: float, psi_deg: float) -> Tuple[int, int, int]:
    psi = np.deg2rad(psi_deg)
    v = np.clip(l * _G + chi * (np.cos(psi) * _T1 + np.sin(psi) * _T2), 0.0, 1.0)
    return tuple(int(x) for x in np.floor(v * 255.0 + 0.5))


PALETTE: Tuple[Tuple[str, Tuple[int, int, int]], ...] = (
    ("rose", _cone(1.0, 0.25, 0.0)),
    ("olive", _cone(1.0, 0.25, 90.0)),
    ("jade", _cone(1.0, 0.25, 180.0)),
    ("slate", _cone(1.0, 0.25, 270.0)),
    ("plum", _cone(0.5, 0.25, 0.0)),
    ("moss", _cone(0.5, 0.25, 90.0)),
    ("pine", _cone(0.5, 0.25, 180.0)),
    ("navy", _cone(0.5, 0.25, 270.0)),
)

PALETTE_NAMES = tuple(name for name, _ in PALETTE)
PALETTE_RGB = np.array([rgb for _, rgb in PALETTE], dtype=np.float64)
BACKGROUND_INDICES = (0, 1, 2, 3)

SHAPES = ("circle", "square", "triangle")


@dataclass(frozen=True)
class SceneSpec:
    background: str
    background_rgb: Tuple[int, int, int]
    shape: str
    color: str
    color_rgb: Tuple[int, int, int]
    center: Tuple[int, int]
    radius: int
    caption: str
    object_mask: np.ndarray  # (h, w) bool

    def to_json(self) -> str:
        mask = self.object_mask
        runs = _rle_encode(mask.reshape(-1))
        return json.dumps({
            "background": self.background,
            "background_rgb": list(self.background_rgb),
            "shape": self.shape,
            "color": self.color,
            "color_rgb": list(self.color_rgb),
            "center": list(self.center),
            "radius": self.radius,
            "caption": self.caption,
            "mask_shape": list(mask.shape),
            "mask_rle": runs,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SceneSpec":
        o = json.loads(line)
        h, w = o["mask_shape"]
        mask = _rle_decode(o["mask_rle"], h * w).reshape(h, w)
        return cls(o["background"], tuple(o["background_rgb"]), o["shape"],
                   o["color"], tuple(o["color_rgb"]), tuple(o["center"]),
                   o["radius"], o["caption"], mask)


def _rle_encode(flat: np.ndarray) -> List[int]:
    """Run lengths alternating zero/one, starting with the zero run."""
    runs = []
    cur = False
    run = 0
    for v in flat:
        if bool(v) == cur:
            run += 1
        else:
            runs.append(run)
            cur = not cur
            run = 1
    runs.append(run)
    return runs


def _rle_decode(runs: List[int], total: int) -> np.ndarray:
    out = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            out[pos:pos + r] = True
        pos += r
        val = not val
    if pos != total:
        raise ContractViolation(f"mask rle covers {pos} of {total} pixels")
    return out


def _rasterize_mask(size: int, shape: str, cx: int, cy: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if shape == "square":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    if shape == "triangle":
        # upward equilateral-ish triangle inscribed in the radius
        v1 = np.array([cx, cy - r], dtype=np.float64)
        v2 = np.array([cx - 0.866 * r, cy + 0.5 * r])
        v3 = np.array([cx + 0.866 * r, cy + 0.5 * r])
        pts = np.stack([xx, yy], axis=-1).astype(np.float64)

        def half(a, b):
            return ((b[0] - a[0]) * (pts[..., 1] - a[1])
                    - (b[1] - a[1]) * (pts[..., 0] - a[0]))

        d1, d2, d3 = half(v1, v2), half(v2, v3), half(v3, v1)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        return ~(neg & pos)
    raise ContractViolation(f"unknown shape {shape!r}")


def render(spec_bg: int, spec_obj: int, shape: str, cx: int, cy: int, r: int,
           size: int) -> Tuple[Image, np.ndarray]:
    mask = _rasterize_mask(size, shape, cx, cy, r)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = PALETTE[spec_bg][1]
    img[mask] = PALETTE[spec_obj][1]
    return Image.from_array(img), mask


def generate(seed: int, count: int, image_size: int = 64) -> List[Tuple[Image, SceneSpec]]:
    """Deterministic corpus of (image, scene spec) pairs."""
    if image_size < 16:
        raise ContractViolation("image_size too small")
    rng = np.random.default_rng(np.random.PCG64(seed))
    out = []
    lo, hi = image_size // 8, image_size // 4
    c_lo, c_hi = int(0.3 * image_size), int(0.7 * image_size)
    for _ in range(count):
        bg_i = int(rng.integers(0, len(BACKGROUND_INDICES)))
        obj_i = int(rng.integers(0, len(PALETTE)))
        while obj_i == bg_i:
            obj_i = int(rng.integers(0, len(PALETTE)))
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        cx = int(rng.integers(c_lo, c_hi))
        cy = int(rng.integers(c_lo, c_hi))
        r = int(rng.integers(lo, hi + 1))
        img, mask = render(bg_i, obj_i, shape, cx, cy, r, image_size)
        caption = f"a {PALETTE_NAMES[obj_i]} {shape} on a {PALETTE_NAMES[bg_i]} background"
        spec = SceneSpec(
            background=PALETTE_NAMES[bg_i],
            background_rgb=PALETTE[bg_i][1],
            shape=shape,
            color=PALETTE_NAMES[obj_i],
            color_rgb=PALETTE[obj_i][1],
            center=(cx, cy),
            radius=r,
            caption=caption,
            object_mask=mask,
        )
        out.append((img, spec))
    return out


def nearest_palette(pixels: np.ndarray) -> np.ndarray:
    """Index of the closest palette color per pixel (ties -> lowest index)."""
    px = pixels.reshape(-1, 3).astype(np.float64)
    d = ((px[:, None, :] - PALETTE_RGB[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1).reshape(pixels.shape[:-1])


def region_color_score(img: Image, mask: np.ndarray, color: Tuple[int, int, int]) -> float:
    """Fraction of masked pixels whose nearest palette color is `color`."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (img.height, img.width):
        raise ContractViolation("mask shape does not match image")
    if not mask.any():
        raise ContractViolation("mask is empty")
    target = np.asarray(color, dtype=np.float64)
    d = ((PALETTE_RGB - target[None, :]) ** 2).sum(axis=1)
    ti = int(np.argmin(d))
    cls = nearest_palette(np.asarray(img.pixels))[mask]
    return float(np.mean(cls == ti))
