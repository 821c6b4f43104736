import numpy as np
import pytest

from aredit.codec import make_codec
from aredit.predictor import make_synthetic
from aredit.pyramid import DEFAULT_SCHEDULE
from aredit.shapesworld import generate


@pytest.fixture(scope="session")
def codec():
    return make_codec(7)


@pytest.fixture(scope="session")
def synth_model():
    return make_synthetic(0)


@pytest.fixture(scope="session")
def schedule():
    return DEFAULT_SCHEDULE


@pytest.fixture(scope="session")
def small_corpus():
    return generate(123, 8, 64)


def bilinear_oracle(src: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Per-output-cell scalar half-pixel bilinear sampling in float32."""
    sh, sw, c = src.shape
    out = np.empty((th, tw, c), dtype=np.float32)
    for i in range(th):
        sy = (i + 0.5) * (sh / th) - 0.5
        y0 = int(np.floor(sy))
        fy = np.float32(sy - y0)
        y0c, y1c = min(max(y0, 0), sh - 1), min(y0 + 1, sh - 1)
        for j in range(tw):
            sx = (j + 0.5) * (sw / tw) - 0.5
            x0 = int(np.floor(sx))
            fx = np.float32(sx - x0)
            x0c, x1c = min(max(x0, 0), sw - 1), min(x0 + 1, sw - 1)
            for ch in range(c):
                top = (np.float32(1.0) - fx) * src[y0c, x0c, ch] + fx * src[y0c, x1c, ch]
                bot = (np.float32(1.0) - fx) * src[y1c, x0c, ch] + fx * src[y1c, x1c, ch]
                out[i, j, ch] = (np.float32(1.0) - fy) * top + fy * bot
    return out
