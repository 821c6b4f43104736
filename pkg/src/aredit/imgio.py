"""PNG helpers. One encode path so byte-for-byte comparisons hold everywhere."""

import io

from PIL import Image as PILImage
import numpy as np

from .errors import ContractViolation
from .numerics import Image


def encode_png(img: Image) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(img.pixels), mode="RGB").save(
        buf, format="PNG", compress_level=6
    )
    return buf.getvalue()


def decode_png(raw: bytes) -> Image:
    try:
        with PILImage.open(io.BytesIO(raw)) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except Exception as exc:
        raise ContractViolation(f"not a decodable image: {exc}") from exc
    return Image.from_array(arr)


def save_png(img: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def load_png(path) -> Image:
    with open(path, "rb") as fh:
        return decode_png(fh.read())
