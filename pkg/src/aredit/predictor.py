"""The next-scale predictor contract plus the analytic synthetic backend.

A predictor maps (previous-scale input feature, prompt) to per-bit
two-way probabilities and cross-attention maps at the input's spatial
shape. Two backends satisfy the same contract: `synthetic` (closed-form,
used by oracle tests) and `transformer` (see transformer.py).
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractViolation, ShapeMismatch, UnsupportedOperation
from .kernels import mix64, uniform_scalar
from .numerics import FeatureMap
from .textenc import EMBED_DIM, PromptEmbedding

SYNTH_ALPHA = 2.0
SYNTH_BETA = 1.5

_ARPM_MAGIC = b"ARPM"
_ARPM_VERSION = 1
_BACKEND_TAGS = {"synthetic": 0, "transformer": 1}
_TAG_BACKENDS = {v: k for k, v in _BACKEND_TAGS.items()}


@dataclass(frozen=True)
class ProbGrid:
    """Per-(position, channel) pair of (p_minus, p_plus)."""

    height: int
    width: int
    channels: int
    probs: np.ndarray  # (h, w, d, 2) float32

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float32)
        if p.shape != (self.height, self.width, self.channels, 2):
            raise ShapeMismatch(
                f"prob shape {p.shape} != ({self.height}, {self.width}, {self.channels}, 2)"
            )
        if p.min() < 0.0 or p.max() > 1.0:
            raise ContractViolation("probabilities outside [0, 1]")
        sums = p.astype(np.float64).sum(axis=-1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ContractViolation("probability pairs do not sum to 1")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_p_plus(cls, p_plus: np.ndarray) -> "ProbGrid":
        p_plus = np.asarray(p_plus, dtype=np.float32)
        pair = np.stack([np.float32(1.0) - p_plus, p_plus], axis=-1)
        return cls(*p_plus.shape, pair)

    @property
    def p_plus(self) -> np.ndarray:
        return self.probs[..., 1]

    @property
    def shape(self):
        return (self.height, self.width, self.channels)

    def prob_of_bits(self, bits: np.ndarray) -> np.ndarray:
        """Gather the probability assigned to the given bit values."""
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != self.shape:
            raise ShapeMismatch(f"bit shape {bits.shape} != {self.shape}")
        return np.where(bits, self.probs[..., 1], self.probs[..., 0])


@dataclass(frozen=True)
class AttentionMaps:
    """Per cross-attention layer: (positions x prompt-tokens) row-stochastic map."""

    layers: Tuple[np.ndarray, ...]

    def __post_init__(self):
        frozen = []
        shape = None
        for m in self.layers:
            m = np.asarray(m, dtype=np.float32)
            if m.ndim != 2:
                raise ShapeMismatch("attention maps must be 2-D")
            if shape is None:
                shape = m.shape
            elif m.shape != shape:
                raise ShapeMismatch("attention layers disagree on shape")
            if m.min() < 0.0:
                raise ContractViolation("attention weights must be non-negative")
            sums = m.astype(np.float64).sum(axis=1)
            if np.abs(sums - 1.0).max() > 2e-3:
                raise ContractViolation("attention rows must sum to 1")
            m = np.ascontiguousarray(m)
            m.flags.writeable = False
            frozen.append(m)
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_positions(self) -> int:
        return self.layers[0].shape[0]

    @property
    def num_tokens(self) -> int:
        return self.layers[0].shape[1]


@dataclass(frozen=True)
class PredictorModel:
    backend: str
    config: dict
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in _BACKEND_TAGS:
            raise ContractViolation(f"unknown backend {self.backend!r}")
        frozen = {}
        for name, arr in self.params.items():
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
            a.flags.writeable = False
            frozen[name] = a
        object.__setattr__(self, "params", frozen)

    @property
    def feature_dim(self) -> int:
        return int(self.config["d"])

    @property
    def fingerprint(self) -> bytes:
        return hashlib.sha256(serialize_model(self)[:-32]).digest()


def make_synthetic(seed: int = 0, d: int = 32, e: int = EMBED_DIM,
                   codec_seed: int = 7,
                   schedule_sides: Tuple[int, ...] = (1, 2, 4, 8, 16)) -> PredictorModel:
    return PredictorModel("synthetic", {"d": d, "e": e, "seed": int(seed),
                                        "alpha": SYNTH_ALPHA, "beta": SYNTH_BETA,
                                        "codec_seed": int(codec_seed),
                                        "schedule": [int(s) for s in schedule_sides]})


def synth_token_shift(seed: int, token_id: int, channel: int, beta: float) -> float:
    """Seeded hash of (token, channel) into {-beta, 0, +beta}."""
    h = mix64(mix64(seed ^ 0x7E57AB1E) * 0x10001 + token_id * 0x3A99 + channel)
    return (h % 3 - 1) * beta


def _synth_logits(model: PredictorModel, inp: FeatureMap, prompt: PromptEmbedding) -> np.ndarray:
    cfg = model.config
    seed = int(cfg["seed"])
    alpha, beta = float(cfg["alpha"]), float(cfg["beta"])
    d = inp.channels
    shift = np.zeros(d, dtype=np.float64)
    for t in prompt.token_ids:
        for c in range(d):
            shift[c] += synth_token_shift(seed, t, c, beta)
    return alpha * inp.data.astype(np.float64) + shift[None, None, :]


def _synth_attention(model: PredictorModel, n_pos: int, prompt: PromptEmbedding) -> AttentionMaps:
    seed = int(model.config["seed"])
    raw = np.empty((n_pos, len(prompt)), dtype=np.float64)
    for j, tok in enumerate(prompt.token_ids):
        for pos in range(n_pos):
            raw[pos, j] = uniform_scalar(seed ^ 0xA77E11, tok, pos) + 0.25
    raw /= raw.sum(axis=1, keepdims=True)
    return AttentionMaps((raw.astype(np.float32),))


def make_sos(prompt: PromptEmbedding, model: PredictorModel) -> FeatureMap:
    """1x1xd start input: the mean prompt vector through a fixed projection.

    Synthetic models draw the projection from their seed; the transformer
    backend owns it as a trained parameter.
    """
    d = model.feature_dim
    mean = prompt.mean_vector.astype(np.float64)
    if model.backend == "transformer":
        proj = model.params["sos_w"].astype(np.float64)
    else:
        seed = int(model.config["seed"])
        e = len(mean)
        proj = np.empty((e, d), dtype=np.float64)
        for i in range(e):
            for j in range(d):
                proj[i, j] = 2.0 * uniform_scalar(seed ^ 0x505F, i, j) - 1.0
        proj /= np.sqrt(e)
    sos = (mean @ proj).astype(np.float32)
    return FeatureMap(1, 1, d, sos.reshape(1, 1, d))


def _check_override(override: Optional[AttentionMaps], n_pos: int, n_tok: int,
                    n_layers: int) -> None:
    if override is None:
        return
    if override.num_positions != n_pos or override.num_tokens != n_tok:
        raise ShapeMismatch(
            f"attention override is {override.num_positions}x{override.num_tokens}, "
            f"expected {n_pos}x{n_tok}"
        )
    if override.num_layers != n_layers:
        raise ShapeMismatch(
            f"attention override has {override.num_layers} layers, expected {n_layers}"
        )


def predict(model: PredictorModel, inp: FeatureMap, prompt: PromptEmbedding,
            attn_override: Optional[AttentionMaps] = None) -> Tuple[ProbGrid, AttentionMaps]:
    """Per-bit probabilities and the attention maps actually used.

    The output grid has the input's spatial shape; callers resample the
    running reconstruction to the scale being predicted first.
    """
    if inp.channels != model.feature_dim:
        raise ShapeMismatch(
            f"input channels {inp.channels} != model dim {model.feature_dim}"
        )
    n_pos = inp.height * inp.width
    if model.backend == "synthetic":
        _check_override(attn_override, n_pos, len(prompt), 1)
        logits = _synth_logits(model, inp, prompt)
        with np.errstate(over="ignore"):
            p_plus = 1.0 / (1.0 + np.exp(-logits))
        probs = ProbGrid.from_p_plus(p_plus.astype(np.float32))
        # the synthetic formula does not consume attention; the override is
        # still echoed back as the maps in effect
        maps = attn_override if attn_override is not None else _synth_attention(
            model, n_pos, prompt)
        return probs, maps
    if model.backend == "transformer":
        from . import transformer

        n_layers = int(model.config["layers"])
        _check_override(attn_override, n_pos, len(prompt), n_layers)
        return transformer.forward_predict(model, inp, prompt, attn_override)
    raise ContractViolation(f"unknown backend {model.backend!r}")


def train(model: PredictorModel, corpus, steps: int, lr: float, seed: int,
          log=None, batch_size: int = 8) -> PredictorModel:
    """Teacher-forced next-scale training (transformer backend only)."""
    if model.backend != "transformer":
        raise UnsupportedOperation("training requires the transformer backend")
    from . import transformer

    return transformer.train_model(model, corpus, steps, lr, seed, log=log,
                                   batch_size=batch_size)


def serialize_model(model: PredictorModel) -> bytes:
    out = bytearray()
    out += _ARPM_MAGIC
    out += struct.pack("<HB", _ARPM_VERSION, _BACKEND_TAGS[model.backend])
    cfg = json.dumps(model.config, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    names = sorted(model.params)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = model.params[name]
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def deserialize_model(raw: bytes) -> PredictorModel:
    from .errors import BadMagic, HashMismatch, Truncated, VersionMismatch

    if len(raw) < 4 + 3 + 4 + 32:
        raise Truncated("model file too short")
    if raw[:4] != _ARPM_MAGIC:
        raise BadMagic("not an ARPM file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise HashMismatch("model file hash mismatch")
    off = 4
    version, tag = struct.unpack_from("<HB", raw, off)
    off += 3
    if version != _ARPM_VERSION:
        raise VersionMismatch(f"model format version {version} unsupported")
    if tag not in _TAG_BACKENDS:
        raise BadMagic(f"unknown backend tag {tag}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    cfg = json.loads(raw[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        params[name] = arr.copy()
    if off != len(body):
        raise Truncated("model file has trailing or missing bytes")
    return PredictorModel(_TAG_BACKENDS[tag], cfg, params)


def save_model(model: PredictorModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> PredictorModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
