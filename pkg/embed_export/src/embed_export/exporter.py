"""The two export operations and their run manifests."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jobs
from .encoders import build_encoder
from .jobs import ExportError, ExportJob
from .scorers import build_scorer
from .spcv import write_spcv


@dataclass
class ExportReport:
    count: int
    dim: int | None = None
    value_range: str | None = None
    missing: list[str] | None = None


def _write_manifest(job: ExportJob, output: str, kind: str, extra: dict) -> None:
    from . import __version__
    digest = hashlib.sha256(Path(output).read_bytes()).hexdigest()
    payload = {
        "kind": kind,
        "model": job.model,
        "tool": "embed-export",
        "version": __version__,
        "input": str(job.input_path),
        "output": str(output),
        "batch_size": job.batch_size,
        "normalize": job.normalize,
        "seed": job.seed,
        "output_sha256": digest,
        **extra,
    }
    Path(output + ".manifest.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def export_embeddings(job: ExportJob) -> ExportReport:
    """Encode every sentence and write one vector record per input id."""
    job.validate()
    rows = jobs.read_sentences(job.input_path)
    if not rows:
        raise ExportError(f"{job.input_path}: no sentences to encode")
    encoder = build_encoder(job.model, seed=job.seed)
    chunks = []
    for start in range(0, len(rows), job.batch_size):
        batch = rows[start:start + job.batch_size]
        chunks.append(encoder.encode_batch([text for _, text in batch]))
    matrix = np.vstack(chunks)
    if job.normalize:
        norms = np.sqrt((matrix * matrix).sum(axis=1))
        flat = np.flatnonzero(norms == 0.0)
        if flat.size:
            raise ExportError(
                f"cannot normalize zero vector for id {rows[flat[0]][0]!r}")
        matrix = matrix / norms[:, None]
    ids = [sid for sid, _ in rows]
    count = write_spcv(job.output_path, ids, matrix)
    _write_manifest(job, job.output_path, "vectors",
                    {"count": count, "dim": encoder.dim})
    return ExportReport(count=count, dim=encoder.dim)


def export_pair_scores(job: ExportJob) -> ExportReport:
    """Score every pair; write {"pair_id","value"} lines under a header
    comment that declares the value range.

    Pairs the model cannot answer are coverage gaps: fatal under strict,
    otherwise skipped and reported.
    """
    job.validate()
    pairs = jobs.read_pairs(job.input_path)
    score, value_range = build_scorer(job.model)
    lines = [f"# embed-export pair scores; model: {job.model}; "
             f"value_range: {value_range}"]
    lo, hi = (0.0, 1.0) if value_range == "0..1" else (1.0, 5.0)
    missing: list[str] = []
    for pid, text_a, text_b in pairs:
        value = score(pid, text_a, text_b)
        if value is None:
            missing.append(pid)
            continue
        if not lo <= value <= hi:
            raise ExportError(
                f"model produced {value} for {pid!r}, outside {value_range}")
        lines.append(json.dumps({"pair_id": pid, "value": value}))
    if missing and job.strict:
        raise ExportError(
            f"{len(missing)} of {len(pairs)} pairs have no score "
            f"(first: {missing[0]!r})")
    Path(job.output_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(job, job.output_path, "scores",
                    {"count": len(pairs) - len(missing),
                     "value_range": value_range, "missing": len(missing)})
    return ExportReport(count=len(pairs) - len(missing),
                        value_range=value_range, missing=missing)
