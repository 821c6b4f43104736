"""Hot numeric kernels: bilinear resampling and counter-based RNG.

Two interchangeable implementations live here: numba @njit loops and a
pure-numpy path. Numba is used when importable unless AREDIT_NUMBA=0 is
set in the environment. Both paths are written with identical float32
operation order so they produce bit-identical outputs; tests assert this.
"The benchmark in benchmarks/kernel_bench.py compares the two."
"""

import os

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_SEED_SALT = 0xA0761D6478BD642F
_STREAM_SALT = 0xE7037ED1A0B428DB
_INV_2_53 = 2.0 ** -53


def _numba_enabled() -> bool:
    flag = os.environ.get("AREDIT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


def mix64(z: int) -> int:
    """splitmix64 finalizer on python ints (reference scalar form)."""
    z = (z + _GOLDEN) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * _MIX1) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * _MIX2) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def rng_base(seed: int, stream: int) -> int:
    """Derive the per-stream hash base for counter RNG."""
    return mix64(mix64(seed ^ _SEED_SALT) ^ mix64(stream ^ _STREAM_SALT))


def uniform_scalar(seed: int, stream: int, counter: int) -> float:
    """One double in [0, 1) from (seed, stream, counter)."""
    h = mix64((rng_base(seed, stream) + counter * _GOLDEN) & 0xFFFFFFFFFFFFFFFF)
    return (h >> 11) * _INV_2_53


def _resample_numpy(src: np.ndarray, th: int, tw: int) -> np.ndarray:
    sh, sw, c = src.shape
    out_y = (np.arange(th, dtype=np.float64) + 0.5) * (sh / th) - 0.5
    out_x = (np.arange(tw, dtype=np.float64) + 0.5) * (sw / tw) - 0.5
    y0 = np.floor(out_y).astype(np.int64)
    x0 = np.floor(out_x).astype(np.int64)
    fy = (out_y - y0).astype(np.float32)
    fx = (out_x - x0).astype(np.float32)
    y0c = np.clip(y0, 0, sh - 1)
    y1c = np.clip(y0 + 1, 0, sh - 1)
    x0c = np.clip(x0, 0, sw - 1)
    x1c = np.clip(x0 + 1, 0, sw - 1)

    s00 = src[y0c[:, None], x0c[None, :], :]
    s01 = src[y0c[:, None], x1c[None, :], :]
    s10 = src[y1c[:, None], x0c[None, :], :]
    s11 = src[y1c[:, None], x1c[None, :], :]

    nx = (np.float32(1.0) - fx)[None, :, None]
    fxb = fx[None, :, None]
    ny = (np.float32(1.0) - fy)[:, None, None]
    fyb = fy[:, None, None]
    top = nx * s00 + fxb * s01
    bot = nx * s10 + fxb * s11
    return ny * top + fyb * bot


def _uniform_grid_numpy(seed: int, stream: int, count: int) -> np.ndarray:
    base = np.uint64(rng_base(seed, stream))
    n = np.arange(count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = base + n * np.uint64(_GOLDEN)
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


HAVE_NUMBA = False
_resample_numba = None
_uniform_grid_numba = None

if _numba_enabled():
    try:
        from numba import njit

        HAVE_NUMBA = True

        @njit(cache=True)
        def _resample_numba(src, th, tw):  # type: ignore[misc]
            sh, sw, c = src.shape
            out = np.empty((th, tw, c), dtype=np.float32)
            for i in range(th):
                sy = (i + 0.5) * (sh / th) - 0.5
                y0 = int(np.floor(sy))
                fy = np.float32(sy - y0)
                ny = np.float32(1.0) - fy
                y0c = min(max(y0, 0), sh - 1)
                y1c = min(y0 + 1, sh - 1)
                for j in range(tw):
                    sx = (j + 0.5) * (sw / tw) - 0.5
                    x0 = int(np.floor(sx))
                    fx = np.float32(sx - x0)
                    nx = np.float32(1.0) - fx
                    x0c = min(max(x0, 0), sw - 1)
                    x1c = min(x0 + 1, sw - 1)
                    for ch in range(c):
                        top = nx * src[y0c, x0c, ch] + fx * src[y0c, x1c, ch]
                        bot = nx * src[y1c, x0c, ch] + fx * src[y1c, x1c, ch]
                        out[i, j, ch] = ny * top + fy * bot
            return out

        @njit(cache=True)
        def _uniform_grid_numba(seed_base, count):  # type: ignore[misc]
            out = np.empty(count, dtype=np.float64)
            for n in range(count):
                z = seed_base + np.uint64(n) * np.uint64(_GOLDEN)
                z = z + np.uint64(_GOLDEN)
                z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
                z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
                z = z ^ (z >> np.uint64(31))
                out[n] = (z >> np.uint64(11)) * _INV_2_53
            return out

    except ImportError:
        HAVE_NUMBA = False


def active_backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def resample_bilinear(src: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Half-pixel-center bilinear resample of an (h, w, c) float32 grid."""
    if src.dtype != np.float32:
        src = src.astype(np.float32)
    src = np.ascontiguousarray(src)
    if HAVE_NUMBA:
        return _resample_numba(src, th, tw)
    return _resample_numpy(src, th, tw)


def uniform_grid(seed: int, stream: int, count: int) -> np.ndarray:
    """count doubles in [0, 1), keyed by (seed, stream, flat index)."""
    if HAVE_NUMBA:
        return _uniform_grid_numba(np.uint64(rng_base(seed, stream)), count)
    return _uniform_grid_numpy(seed, stream, count)
