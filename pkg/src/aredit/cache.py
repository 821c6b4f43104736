"""One forward pass over the source image, persisted for later edits.

The builder records the encoder's bit labels, the predictor's per-bit
distributions, and (optionally) its cross-attention maps at every scale.
Probabilities and attention are quantized to 16-bit fixed point at build
time, so the in-memory cache is exactly what the AREC file round-trips.
No sampling happens anywhere in here: identical inputs give identical
bytes.
"""

import hashlib
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .codec import CodecParams, encode_image
from .errors import (BadMagic, ContractViolation, HashMismatch, ShapeMismatch,
                     Truncated, VersionMismatch)
from .numerics import FeatureMap, Image, upsample_bilinear
from .predictor import AttentionMaps, PredictorModel, ProbGrid, make_sos, predict
from .pyramid import BitGrid, ScaleSchedule, encode_pyramid
from .textenc import encode_prompt

_MAGIC = b"AREC"
_VERSION = 1
_FLAG_ATTENTION = 1 << 0
_FLAG_PROBS_U16 = 1 << 1


def _quantize_u16(arr: np.ndarray) -> np.ndarray:
    return np.floor(arr.astype(np.float64) * 65535.0 + 0.5).astype(np.uint16)


def _dequantize_u16(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float64) / 65535.0).astype(np.float32)


def quantize_prob_grid(pg: ProbGrid) -> ProbGrid:
    """Snap p+ onto the 16-bit lattice the cache file stores."""
    q = _dequantize_u16(_quantize_u16(pg.p_plus))
    return ProbGrid.from_p_plus(q)


def quantize_attention(maps: AttentionMaps) -> AttentionMaps:
    return AttentionMaps(tuple(_dequantize_u16(_quantize_u16(m)) for m in maps.layers))


@dataclass(frozen=True)
class EditCache:
    schedule: ScaleSchedule
    r_queue: Tuple[BitGrid, ...]
    p_queue: Tuple[ProbGrid, ...]
    w_queue: Optional[Tuple[AttentionMaps, ...]]
    source_token_ids: Tuple[int, ...]
    model_fingerprint: bytes
    codec_seed: int
    codec_patch: int
    format_version: int = _VERSION

    def __post_init__(self):
        k = self.schedule.num_levels
        d = self.schedule.feature_dim
        if len(self.r_queue) != k or len(self.p_queue) != k:
            raise ContractViolation("queue lengths must equal the level count")
        if self.w_queue is not None and len(self.w_queue) != k:
            raise ContractViolation("attention queue length must equal the level count")
        for i, (h, w) in enumerate(self.schedule.levels):
            if self.r_queue[i].shape != (h, w, d):
                raise ContractViolation(f"r_queue[{i}] shape mismatch")
            if self.p_queue[i].shape != (h, w, d):
                raise ContractViolation(f"p_queue[{i}] shape mismatch")
            if self.w_queue is not None and self.w_queue[i].num_positions != h * w:
                raise ContractViolation(f"w_queue[{i}] position count mismatch")

    @property
    def num_levels(self) -> int:
        return self.schedule.num_levels


def build_cache(img: Image, source_prompt: str, model: PredictorModel,
                codec: CodecParams, schedule: ScaleSchedule,
                keep_attention: bool = True) -> EditCache:
    """Algorithm-1 pass: encode, quantize, and predict every scale once."""
    try:
        feat = encode_image(img, codec)
        residuals, inputs = encode_pyramid(feat, schedule)
        prompt = encode_prompt(source_prompt)
        p_queue: List[ProbGrid] = []
        w_queue: List[AttentionMaps] = []
        x = make_sos(prompt, model)
        for k in range(schedule.num_levels):
            h, w = schedule.levels[k]
            if x.shape[:2] != (h, w):
                x = upsample_bilinear(x, h, w)
            probs, maps = predict(model, x, prompt)
            p_queue.append(quantize_prob_grid(probs))
            w_queue.append(quantize_attention(maps))
            if k + 1 < schedule.num_levels:
                x = inputs[k]
        return EditCache(
            schedule=schedule,
            r_queue=tuple(residuals),
            p_queue=tuple(p_queue),
            w_queue=tuple(w_queue) if keep_attention else None,
            source_token_ids=tuple(prompt.token_ids),
            model_fingerprint=model.fingerprint,
            codec_seed=codec.seed,
            codec_patch=codec.patch_size,
        )
    except ContractViolation as exc:
        raise ContractViolation(f"cache build failed: {exc}") from exc


def reconstruct_feature(cache: EditCache, upto_k: Optional[int] = None) -> FeatureMap:
    from .pyramid import accumulate

    k = cache.num_levels if upto_k is None else upto_k
    return accumulate(list(cache.r_queue), cache.schedule, k)


def serialize_cache(cache: EditCache) -> bytes:
    k = cache.num_levels
    d = cache.schedule.feature_dim
    has_attn = cache.w_queue is not None
    flags = _FLAG_PROBS_U16 | (_FLAG_ATTENTION if has_attn else 0)
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<HH", cache.format_version, flags)
    out += struct.pack("<HH", k, d)
    for h, w in cache.schedule.levels:
        out += struct.pack("<HH", h, w)
    out += struct.pack("<qH", cache.codec_seed, cache.codec_patch)
    out += struct.pack("<I", len(cache.source_token_ids))
    for t in cache.source_token_ids:
        out += struct.pack("<H", t)
    if len(cache.model_fingerprint) != 32:
        raise ContractViolation("model fingerprint must be 32 bytes")
    out += cache.model_fingerprint
    n_layers = cache.w_queue[0].num_layers if has_attn else 0
    n_tokens = cache.w_queue[0].num_tokens if has_attn else 0
    out += struct.pack("<BH", n_layers, n_tokens)
    for i in range(k):
        out += cache.r_queue[i].packed()
        out += _quantize_u16(cache.p_queue[i].p_plus).astype("<u2").tobytes()
        if has_attn:
            for layer in cache.w_queue[i].layers:
                out += _quantize_u16(layer).astype("<u2").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def deserialize_cache(raw: bytes) -> EditCache:
    if len(raw) < 4:
        raise Truncated("cache file shorter than its magic")
    if raw[:4] != _MAGIC:
        raise BadMagic("not an AREC file")
    if len(raw) < 4 + 8 + 32:
        raise Truncated("cache file header incomplete")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise HashMismatch("cache content hash mismatch")

    off = 4
    try:
        version, flags = struct.unpack_from("<HH", raw, off)
        off += 4
        if version != _VERSION:
            raise VersionMismatch(f"cache format version {version} unsupported")
        if not flags & _FLAG_PROBS_U16:
            raise VersionMismatch("unknown probability encoding")
        k, d = struct.unpack_from("<HH", raw, off)
        off += 4
        levels = []
        for _ in range(k):
            h, w = struct.unpack_from("<HH", raw, off)
            off += 4
            levels.append((h, w))
        codec_seed, codec_patch = struct.unpack_from("<qH", raw, off)
        off += 10
        (n_tok,) = struct.unpack_from("<I", raw, off)
        off += 4
        token_ids = struct.unpack_from(f"<{n_tok}H", raw, off)
        off += 2 * n_tok
        fingerprint = raw[off:off + 32]
        off += 32
        n_layers, n_attn_tokens = struct.unpack_from("<BH", raw, off)
        off += 3
        has_attn = bool(flags & _FLAG_ATTENTION)
        schedule = ScaleSchedule(tuple(levels), d)
        r_queue, p_queue, w_queue = [], [], []
        per_pos = (d + 7) // 8
        for h, w in levels:
            nb = h * w * per_pos
            r_queue.append(BitGrid.from_packed(raw[off:off + nb], h, w, d))
            off += nb
            count = h * w * d
            p_raw = np.frombuffer(raw, dtype="<u2", count=count, offset=off)
            off += 2 * count
            p_queue.append(ProbGrid.from_p_plus(
                _dequantize_u16(p_raw).reshape(h, w, d)))
            if has_attn:
                layers = []
                for _ in range(n_layers):
                    cnt = h * w * n_attn_tokens
                    m = np.frombuffer(raw, dtype="<u2", count=cnt, offset=off)
                    off += 2 * cnt
                    layers.append(_dequantize_u16(m).reshape(h * w, n_attn_tokens))
                w_queue.append(AttentionMaps(tuple(layers)))
    except (struct.error, ValueError, ShapeMismatch) as exc:
        raise Truncated(f"cache file truncated: {exc}") from exc
    if off != len(body):
        raise Truncated(f"cache has {len(body) - off} unexpected trailing bytes")
    return EditCache(
        schedule=schedule,
        r_queue=tuple(r_queue),
        p_queue=tuple(p_queue),
        w_queue=tuple(w_queue) if has_attn else None,
        source_token_ids=tuple(int(t) for t in token_ids),
        model_fingerprint=fingerprint,
        codec_seed=int(codec_seed),
        codec_patch=int(codec_patch),
        format_version=version,
    )


def save_cache(cache: EditCache, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_cache(cache))


def load_cache(path) -> EditCache:
    with open(path, "rb") as fh:
        return deserialize_cache(fh.read())
