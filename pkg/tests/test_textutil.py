from scicomm_drift.textutil import tokenize


def test_lowercases_and_splits_on_punctuation():
    assert tokenize("Vitamin D, they said!") == ["vitamin", "d", "they", "said"]


def test_underscore_is_a_separator():
    assert tokenize("sleep_quality") == ["sleep", "quality"]


def test_digits_kept():
    assert tokenize("rose by 16 percent") == ["rose", "by", "16", "percent"]


def test_unicode_letters_kept_together():
    assert tokenize("café au lait") == ["café", "au", "lait"]


def test_empty_and_symbol_only():
    assert tokenize("") == []
    assert tokenize("!!! --- ***") == []
