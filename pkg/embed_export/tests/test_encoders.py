import numpy as np
import pytest

from embed_export.encoders import (
    HashNgramEncoder, build_encoder, fnv1a64, tokenize,
)
from embed_export.jobs import ExportError


def test_fnv1a64_reference_values():
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a64("foobar") == 0x85944171F73967E8


def test_tokenize():
    assert tokenize("Mice ate 3 grams of cheese!") == \
        ["mice", "ate", "3", "grams", "of", "cheese"]
    assert tokenize("") == []


def test_encoder_is_a_pure_function():
    enc = HashNgramEncoder(dim=32, seed=4)
    a = enc.encode("coffee lowers risk")
    b = enc.encode("coffee lowers risk")
    assert a.tobytes() == b.tobytes()
    assert a.shape == (32,)


def test_encoder_distinguishes_texts_and_seeds():
    enc = HashNgramEncoder(dim=64, seed=0)
    assert enc.encode("coffee lowers risk").tobytes() != \
        enc.encode("tea raises risk").tobytes()
    other = HashNgramEncoder(dim=64, seed=1)
    assert enc.encode("coffee").tobytes() != other.encode("coffee").tobytes()


def test_encode_batch_matches_single():
    enc = HashNgramEncoder(dim=16, seed=2)
    texts = ["a b c", "d e", "f"]
    batch = enc.encode_batch(texts)
    for row, text in zip(batch, texts):
        assert np.array_equal(row, enc.encode(text))
    assert enc.encode_batch([]).shape == (0, 16)


def test_dim_validation():
    with pytest.raises(ExportError):
        HashNgramEncoder(dim=1)


def test_build_encoder_registry():
    assert build_encoder("hash-ngram-v1").dim == 64
    assert build_encoder("hash-ngram-v1:dim=128").dim == 128
    with pytest.raises(ExportError):
        build_encoder("minilm-l6-v2")
    with pytest.raises(ExportError):
        build_encoder("hash-ngram-v1:width=9")
    with pytest.raises(ExportError):
        build_encoder("hash-ngram-v1:dim=lots")
