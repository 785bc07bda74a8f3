"""Sentence encoders.

The built-in encoder is a hashed character/word n-gram embedder: cheap,
dependency-free, and a pure function of (text, dim, seed), so re-export is
reproducible on any host. Heavyweight transformer encoders run outside this
package; their job is only to produce the same file format.
"""
from __future__ import annotations

import re

import numpy as np

from .jobs import ExportError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
U64 = (1 << 64) - 1

_WORD = re.compile(r"[a-z0-9]+")


def fnv1a64(data: str) -> int:
    h = FNV_OFFSET
    for byte in data.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & U64
    return h


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _features(text: str) -> list[str]:
    feats = []
    for tok in tokenize(text):
        feats.append("w:" + tok)
        padded = f"^{tok}$"
        for i in range(len(padded) - 2):
            feats.append("c:" + padded[i:i + 3])
    return feats


class HashNgramEncoder:
    """Signed feature hashing of word unigrams and character trigrams."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ExportError(f"encoder dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for feat in _features(text):
            h = fnv1a64(f"{self.seed}|{feat}")
            slot = (h >> 1) % self.dim
            sign = 1.0 if h & 1 else -1.0
            vec[slot] += sign
        return vec

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts]) if texts else \
            np.zeros((0, self.dim))


def build_encoder(model: str, seed: int = 0) -> HashNgramEncoder:
    """Resolve a model identifier like "hash-ngram-v1" or
    "hash-ngram-v1:dim=128". Anything else is a load failure here; real
    encoder backends register under their own identifiers."""
    name, _, opts = model.partition(":")
    if name != "hash-ngram-v1":
        raise ExportError(f"cannot load model {model!r}: no such encoder")
    dim = 64
    for opt in filter(None, opts.split(",")):
        key, _, value = opt.partition("=")
        if key != "dim":
            raise ExportError(f"unknown encoder option {key!r}")
        try:
            dim = int(value)
        except ValueError:
            raise ExportError(f"bad encoder dim {value!r}") from None
    return HashNgramEncoder(dim=dim, seed=seed)
