"""Toy prompt encoder: hashed open vocabulary plus seeded embedding table.

Replaces a pretrained text encoder. Words are lowercased, split on
anything non-alphanumeric, hashed to 16-bit token ids, and looked up in a
deterministic hash-seeded embedding table. Alignment between two prompts
is the longest common subsequence on token ids.
"""

import hashlib
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

EMBED_DIM = 32
VOCAB_SEED = 0x5EED0C0DE
NULL_TOKEN = 0

_SPLIT = re.compile(r"[^a-z0-9]+")


def hash_word(word: str) -> int:
    """16-bit token id; 0 is reserved for the empty-prompt NULL token."""
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest[:2], "little") % 65535 + 1


def tokenize(text: str) -> List[int]:
    words = [w for w in _SPLIT.split(text.lower()) if w]
    if not words:
        return [NULL_TOKEN]
    return [hash_word(w) for w in words]


def token_vector(token_id: int, vocab_hash: int = VOCAB_SEED) -> np.ndarray:
    """Deterministic embedding row: hash-seeded uniform values in [-1, 1]."""
    out = np.empty(EMBED_DIM, dtype=np.float32)
    for j in range(EMBED_DIM):
        h = hashlib.blake2b(
            b"%d:%d:%d" % (vocab_hash, token_id, j), digest_size=8
        ).digest()
        u = int.from_bytes(h, "little") / 2 ** 64
        out[j] = np.float32(2.0 * u - 1.0)
    return out


@dataclass(frozen=True)
class PromptEmbedding:
    token_ids: Tuple[int, ...]
    vectors: np.ndarray  # (L, EMBED_DIM) float32
    vocab_hash: int

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        assert v.shape == (len(self.token_ids), EMBED_DIM)
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def mean_vector(self) -> np.ndarray:
        return self.vectors.astype(np.float64).mean(axis=0).astype(np.float32)


def encode_prompt(text: str) -> PromptEmbedding:
    ids = tokenize(text)
    vecs = np.stack([token_vector(t) for t in ids])
    return PromptEmbedding(tuple(ids), vecs, VOCAB_SEED)


def align_tokens(src: PromptEmbedding, tgt: PromptEmbedding) -> List[Optional[int]]:
    """LCS alignment: target index -> matching source index (or None).

    Ties resolve toward the earliest source positions, which falls out of
    preferring the source-skip branch during the standard DP backtrack.
    """
    a, b = src.token_ids, tgt.token_ids
    n, m = len(a), len(b)
    dp = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    out: List[Optional[int]] = [None] * m
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            out[j] = i
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return out
