"""Similarity metrics, tf-idf embeddings, and the vector interchange file.

The metrics here feed candidate-pair generation, auto-labeling, and the
lexical-change analyses, so their exact conventions matter: Jaccard works on
lowercased word sets, edit distance is Levenshtein normalized by the longer
length, and cosine refuses zero-norm inputs rather than guessing.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .hashing import signed_slot
from .textutil import tokenize

VECTOR_MAGIC = b"SPCV"
VECTOR_VERSION = 1


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Zero-norm input is an error: a missing embedding should fail loudly,
    not score 0 quietly.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"cosine: shape mismatch {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("cosine: non-finite input")
    nx = math.sqrt(float(x @ x))
    ny = math.sqrt(float(y @ y))
    if nx == 0.0 or ny == 0.0:
        raise ValidationError("cosine: zero-norm vector")
    value = float(x @ y) / (nx * ny)
    # Guard against float drift past the mathematical range.
    return max(-1.0, min(1.0, value))


def jaccard_index(text_a: str, text_b: str) -> float:
    """Word-set overlap |A & B| / |A | B| on lowercased tokens.

    Two texts with no words at all are identical as sets, so 1.0.
    """
    set_a = set(tokenize(text_a))
    set_b = set(tokenize(text_b))
    if not set_a and not set_b:
        return 1.0
    return len(set_a & set_b) / len(set_a | set_b)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Classic edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, item_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, item_b in enumerate(b, start=1):
            cost = 0 if item_a == item_b else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[len(b)]


def normalized_edit_distance(a: str, b: str, unit: str = "char") -> float:
    """Levenshtein distance divided by the longer length, in [0, 1].

    ``unit`` selects character ops (default) or word-token ops. Two empty
    inputs are identical, so 0.0.
    """
    if unit == "char":
        seq_a: Sequence = a
        seq_b: Sequence = b
    elif unit == "token":
        seq_a = tokenize(a)
        seq_b = tokenize(b)
    else:
        raise ValidationError(f"unknown edit-distance unit {unit!r}")
    longest = max(len(seq_a), len(seq_b))
    if longest == 0:
        return 0.0
    return levenshtein(seq_a, seq_b) / longest


def avg_matching_edit_distance(text_pairs: Iterable[tuple[str, str]], unit: str = "char") -> float:
    """Mean normalized edit distance over matched finding pairs."""
    total = 0.0
    count = 0
    for left, right in text_pairs:
        total += normalized_edit_distance(left, right, unit)
        count += 1
    if count == 0:
        raise ValidationError("avg_matching_edit_distance: empty pair list")
    return total / count


@dataclass
class EmbeddingVector:
    """A dense embedding with an identifier for interchange files."""
    id: str
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def validate(self) -> None:
        if self.values.ndim != 1 or self.dim == 0:
            raise ValidationError(f"vector {self.id!r}: values must be a non-empty 1-d array")
        if not np.isfinite(self.values).all():
            raise ValidationError(f"vector {self.id!r}: non-finite values")


class EmbeddingProvider(Protocol):
    """Uniform lookup interface for pair generation and scoring."""

    def embed(self, key: str) -> EmbeddingVector: ...

    def vector_for(self, finding_id: str, text: str) -> EmbeddingVector: ...


@dataclass
class TfidfModel:
    idf: dict[str, float]
    n_docs: int
    hash_dim: int

    @property
    def default_idf(self) -> float:
        """idf of a token never seen at fit time (df = 0)."""
        return math.log((1 + self.n_docs) / 1.0) + 1.0


def fit_tfidf(corpus: Iterable[str], hash_dim: int = 4096) -> TfidfModel:
    """Fit document frequencies over a text corpus.

    idf(t) = ln((1 + N) / (1 + df_t)) + 1, so no weight is ever zero or
    negative and unseen tokens stay finite.
    """
    if hash_dim <= 0 or hash_dim & (hash_dim - 1):
        raise ValidationError("hash_dim must be a positive power of two")
    df: dict[str, int] = {}
    n_docs = 0
    for text in corpus:
        n_docs += 1
        for token in set(tokenize(text)):
            df[token] = df.get(token, 0) + 1
    if n_docs == 0:
        raise ValidationError("fit_tfidf: empty corpus")
    idf = {t: math.log((1 + n_docs) / (1 + c)) + 1.0 for t, c in df.items()}
    return TfidfModel(idf=idf, n_docs=n_docs, hash_dim=hash_dim)


def embed_tfidf(model: TfidfModel, text: str, vector_id: str = "") -> EmbeddingVector:
    """Sublinear tf-idf, signed-hashed to ``model.hash_dim``, L2 normalized.

    A text with no tokens embeds to the zero vector (callers can check
    ``is_zero``; cosine on it raises).
    """
    counts: dict[str, int] = {}
    for token in tokenize(text):
        counts[token] = counts.get(token, 0) + 1
    values = np.zeros(model.hash_dim, dtype=np.float64)
    for token, tf in counts.items():
        weight = (1.0 + math.log(tf)) * model.idf.get(token, model.default_idf)
        slot, sign = signed_slot(token, model.hash_dim)
        values[slot] += sign * weight
    norm = math.sqrt(float(values @ values))
    if norm > 0.0:
        values /= norm
    return EmbeddingVector(id=vector_id, values=values)


class TfidfProvider:
    """Deterministic built-in embedding provider backed by a TfidfModel."""

    def __init__(self, model: TfidfModel):
        self.model = model

    def embed(self, key: str) -> EmbeddingVector:
        return embed_tfidf(self.model, key)

    def vector_for(self, finding_id: str, text: str) -> EmbeddingVector:
        return embed_tfidf(self.model, text, vector_id=finding_id)


class VectorFileProvider:
    """Embedding lookup over vectors loaded from an interchange file."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self._vectors = vectors
        self.dim = dim

    def embed(self, key: str) -> EmbeddingVector:
        try:
            return EmbeddingVector(id=key, values=self._vectors[key])
        except KeyError:
            raise ValidationError(f"no embedding for id {key!r} in vector file") from None

    def vector_for(self, finding_id: str, text: str) -> EmbeddingVector:
        return self.embed(finding_id)

    def __len__(self) -> int:
        return len(self._vectors)

    def ids(self) -> list[str]:
        return list(self._vectors)


def write_vectors(path: str | Path, vectors: Iterable[EmbeddingVector]) -> int:
    """Write the binary vector interchange file.

    Layout: magic ``SPCV``, version byte 0x01, little-endian u32 dim,
    little-endian u64 record count, then per record a little-endian u16 id
    byte length, the UTF-8 id, and dim little-endian f32 values.
    """
    records: list[tuple[bytes, np.ndarray]] = []
    dim: int | None = None
    seen: set[str] = set()
    for vec in vectors:
        vec.validate()
        if vec.id in seen:
            raise ValidationError(f"duplicate vector id {vec.id!r}")
        seen.add(vec.id)
        if dim is None:
            dim = vec.dim
        elif vec.dim != dim:
            raise ValidationError(
                f"vector {vec.id!r}: dim {vec.dim} != file dim {dim}")
        raw_id = vec.id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValidationError(f"vector id too long ({len(raw_id)} bytes)")
        records.append((raw_id, np.asarray(vec.values, dtype="<f4")))
    if dim is None:
        raise ValidationError("write_vectors: no vectors")
    with open(path, "wb") as fh:
        fh.write(VECTOR_MAGIC)
        fh.write(struct.pack("<B", VECTOR_VERSION))
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(records)))
        for raw_id, values in records:
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(values.tobytes())
    return len(records)


def load_vectors(path: str | Path) -> VectorFileProvider:
    """Read a vector interchange file, validating magic, version, and size."""
    blob = Path(path).read_bytes()
    if len(blob) < 17:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != VECTOR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version = blob[4]
    if version != VECTOR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dim = struct.unpack_from("<I", blob, 5)[0]
    count = struct.unpack_from("<Q", blob, 9)[0]
    if dim == 0:
        raise FormatError(f"{path}: zero dimension")
    offset = 17
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > len(blob):
            raise FormatError(f"{path}: truncated at byte {offset}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len + 4 * dim > len(blob):
            raise FormatError(f"{path}: truncated at byte {offset}")
        vec_id = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += 4 * dim
        if vec_id in vectors:
            raise FormatError(f"{path}: duplicate id {vec_id!r}")
        if not np.isfinite(values).all():
            raise FormatError(f"{path}: non-finite values for id {vec_id!r}")
        vectors[vec_id] = values
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return VectorFileProvider(vectors, dim)
