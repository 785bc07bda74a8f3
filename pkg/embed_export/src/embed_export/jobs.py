"""Export jobs and the interchange files they read."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ExportError(Exception):
    """Bad job parameters, unloadable model, or malformed input."""


@dataclass
class ExportJob:
    input_path: str
    output_path: str
    model: str                  # encoder or scorer identifier, e.g. "hash-ngram-v1"
    batch_size: int = 32
    normalize: bool = False
    seed: int = 0
    strict: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if not self.model:
            raise ExportError("model identifier is empty")
        if not Path(self.input_path).exists():
            raise ExportError(f"input file not found: {self.input_path}")


def _iter_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{path}:{line_no}: not valid JSON: {exc}") from None


def read_sentences(path: str | Path) -> list[tuple[str, str]]:
    """Sentence file: one {"id", "text"} object per line.

    Duplicate ids are an id collision and always fatal; the vector file
    format requires unique keys.
    """
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for line_no, obj in _iter_jsonl(path):
        for key in ("id", "text"):
            if key not in obj:
                raise ExportError(f"{path}:{line_no}: missing {key!r}")
        sid = str(obj["id"])
        if sid in seen:
            raise ExportError(f"{path}:{line_no}: duplicate id {sid!r}")
        seen.add(sid)
        rows.append((sid, str(obj["text"])))
    return rows


def read_pairs(path: str | Path) -> list[tuple[str, str, str]]:
    """Pair file: needs "pair_id" plus the two finding texts per line."""
    rows: list[tuple[str, str, str]] = []
    seen: set[str] = set()
    for line_no, obj in _iter_jsonl(path):
        for key in ("pair_id", "finding_paper", "finding_mention"):
            if key not in obj:
                raise ExportError(f"{path}:{line_no}: missing {key!r}")
        pid = str(obj["pair_id"])
        if pid in seen:
            raise ExportError(f"{path}:{line_no}: duplicate pair_id {pid!r}")
        seen.add(pid)
        rows.append((pid, str(obj["finding_paper"]), str(obj["finding_mention"])))
    return rows
