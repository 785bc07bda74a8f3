"""Stable hashing and seeded sampling primitives.

Everything in this module must be reproducible across processes, platforms,
and languages: feature hashing, pair identifiers, and every seeded draw in
the pipeline build on these functions. Nothing here may depend on Python's
per-process hash randomization.
"""
from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1

#: SplitMix64 increment ("golden gamma"), also used to derive substreams.
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def stable_hash64(data: str | bytes) -> int:
    """64-bit BLAKE2b digest of ``data`` as an unsigned integer."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def signed_slot(token: str, dim: int) -> tuple[int, float]:
    """Map a token to a (bucket, sign) pair for signed feature hashing.

    ``dim`` must be a power of two. The low bits of the 64-bit hash pick the
    bucket and the top bit carries the sign, so the two are effectively
    independent.
    """
    h = stable_hash64(token)
    return h & (dim - 1), (1.0 if (h >> 63) == 0 else -1.0)


def make_pair_id(paper_doc_id: str, paper_sent_idx: int,
                 mention_doc_id: str, mention_sent_idx: int) -> str:
    """Stable 128-bit candidate-pair identifier, hex encoded.

    BLAKE2b-128 over the unit-separated key tuple. Stable across runs and
    platforms so external score files can join on it.
    """
    key = "\x1f".join((paper_doc_id, str(paper_sent_idx),
                       mention_doc_id, str(mention_sent_idx)))
    return hashlib.blake2b(key.encode("utf-8"), digest_size=16).hexdigest()


class SplitMix64:
    """SplitMix64 generator (Steele, Lea, Flood 2014).

    Chosen as the pipeline's named, portable 64-bit generator: the full
    state-update and output-mix recipe fits in a few lines and reproduces
    bit-for-bit in any language with 64-bit integer arithmetic.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        span = _MASK64 + 1
        limit = span - (span % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample_prefix(self, items: list, k: int) -> list:
        """Uniform sample of k items without replacement, in draw order.

        Partial Fisher-Yates: mutates ``items`` in place and returns the
        first k slots.
        """
        n = len(items)
        k = min(k, n)
        for i in range(k):
            j = i + self.below(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def shuffle(self, items: list) -> list:
        self.sample_prefix(items, len(items))
        return items


def substream(seed: int, index: int) -> SplitMix64:
    """Child generator for stream ``index``.

    Documented derivation (needed for cross-language reproduction):
    child seed = seed XOR ((index + 1) * golden gamma) mod 2^64.
    """
    return SplitMix64((seed ^ ((index + 1) * GOLDEN_GAMMA)) & _MASK64)
