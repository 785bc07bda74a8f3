"""Shared word tokenization.

One tokenizer for lexical overlap, tf-idf, and retrieval so scores stay
comparable across modules.
"""
from __future__ import annotations

import re

# Maximal alphanumeric runs; underscore is a separator like any other symbol.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; any non-alphanumeric run separates."""
    return _TOKEN_RE.findall(text.lower())
