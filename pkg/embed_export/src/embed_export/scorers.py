"""Pair-scoring models and the identifier registry.

Built-ins are deterministic lexical stand-ins so fixtures can be produced
offline: "dice-prob-v1" emits probability-style values in [0, 1] and
"overlap-reg-v1" emits rating-style values in [1, 5]. "table:<path>" adapts
a value file produced by any external model, which is where transformer
probabilities enter the pipeline.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from .encoders import tokenize
from .jobs import ExportError

ScoreFn = Callable[[str, str, str], "float | None"]


def _dice_prob(pair_id: str, text_a: str, text_b: str) -> float:
    a, b = set(tokenize(text_a)), set(tokenize(text_b))
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def _overlap_reg(pair_id: str, text_a: str, text_b: str) -> float:
    a, b = set(tokenize(text_a)), set(tokenize(text_b))
    if not a and not b:
        return 5.0
    union = len(a | b)
    return 1.0 + 4.0 * (len(a & b) / union if union else 0.0)


def _load_table(path: str) -> dict[str, float]:
    table: dict[str, float] = {}
    file = Path(path)
    if not file.exists():
        raise ExportError(f"cannot load model table: {path} not found")
    with open(file, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                table[str(obj["pair_id"])] = float(obj["value"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ExportError(f"{path}:{line_no}: {exc}") from None
    return table


def _table_range(table: dict[str, float]) -> str:
    if not table:
        return "0..1"
    lo, hi = min(table.values()), max(table.values())
    if 0.0 <= lo and hi <= 1.0:
        return "0..1"
    if 1.0 <= lo and hi <= 5.0:
        return "1..5"
    raise ExportError(
        f"table values span [{lo}, {hi}], neither probabilities nor ratings")


def build_scorer(model: str) -> tuple[ScoreFn, str]:
    """Returns (score function, declared value range). The function may
    return None for a pair the model has no answer for (a coverage gap)."""
    if model == "dice-prob-v1":
        return _dice_prob, "0..1"
    if model == "overlap-reg-v1":
        return _overlap_reg, "1..5"
    if model.startswith("table:"):
        table = _load_table(model[len("table:"):])

        def from_table(pair_id: str, text_a: str, text_b: str) -> float | None:
            return table.get(pair_id)

        return from_table, _table_range(table)
    raise ExportError(f"cannot load model {model!r}: no such scorer")
