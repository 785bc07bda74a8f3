"""Regenerate the committed exporter outputs under tests/fixtures/secondary/.

Runs the scicomm-drift CLI (extract, pair) in a scratch directory to get the
mini-corpus findings and candidate pairs, converts the findings to the
sentence JSONL this tool consumes, then exports vectors and pair scores.
The consumer never imports this package; it reads only these files.
"""
from __future__ import annotations

import json
import os
import shutil
import struct
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve()
REPO = HERE.parents[2]
FIXTURES = REPO / "tests" / "fixtures"
OUT_DIR = FIXTURES / "secondary"
# everything below runs with the repo root as CWD and repo-relative paths,
# so the committed manifests carry no machine-specific components
SCRATCH = Path("build") / "fixture_scratch"

sys.path.insert(0, str(HERE.parents[1] / "src"))
from embed_export.exporter import export_embeddings, export_pair_scores  # noqa: E402
from embed_export.jobs import ExportJob  # noqa: E402


def run_producer(argv: list[str]) -> None:
    proc = subprocess.run([sys.executable, "-m", "scicomm_drift.cli"] + argv,
                          capture_output=True, text=True, cwd=REPO)
    if proc.returncode != 0:
        raise SystemExit(f"producer stage failed:\n{proc.stdout}{proc.stderr}")


def findings_to_sentences(findings_path: Path, out_path: Path) -> int:
    n = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for line in findings_path.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            obj = {"id": f"{row['doc_id']}#{row['sent_idx']}", "text": row["text"]}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            n += 1
    return n


def dump_expected_values(spcv_path: Path, out_path: Path) -> None:
    """Sidecar with the exact float64-widened values of every record."""
    blob = spcv_path.read_bytes()
    dim = struct.unpack_from("<I", blob, 5)[0]
    count = struct.unpack_from("<Q", blob, 9)[0]
    offset = 17
    with open(out_path, "w", encoding="utf-8") as fh:
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            vec_id = blob[offset:offset + id_len].decode("utf-8")
            offset += id_len
            values = [float(v) for v in struct.unpack_from(f"<{dim}f", blob, offset)]
            offset += 4 * dim
            fh.write(json.dumps({"id": vec_id, "values": values}) + "\n")
    assert offset == len(blob), "trailing bytes in vector file"


def main() -> None:
    os.chdir(REPO)
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    shutil.rmtree(SCRATCH, ignore_errors=True)
    SCRATCH.mkdir(parents=True)
    out_rel = OUT_DIR.relative_to(REPO)
    cfg = "tests/fixtures/config.yaml"
    corpus = "tests/fixtures/mini_corpus"

    findings = SCRATCH / "findings.jsonl"
    pairs = SCRATCH / "pairs.jsonl"
    run_producer(["extract", "--config", cfg,
                  "--train-corpus", "tests/fixtures/train_sentences.jsonl",
                  "--corpus", corpus,
                  "--model-out", str(SCRATCH / "model.bin"),
                  "--out", str(findings)])
    run_producer(["pair", "--config", cfg, "--corpus", corpus,
                  "--findings", str(findings), "--out", str(pairs)])

    sentences = SCRATCH / "sentences.jsonl"
    n_sentences = findings_to_sentences(findings, sentences)

    spcv = out_rel / "findings_vectors.spcv"
    report = export_embeddings(ExportJob(
        str(sentences), str(spcv), "hash-ngram-v1:dim=64",
        normalize=True, seed=7))
    print(f"vectors: {report.count} records, dim {report.dim}")
    assert report.count == n_sentences
    dump_expected_values(spcv, out_rel / "findings_vectors_expected.jsonl")

    probs = out_rel / "pair_probs.jsonl"
    report = export_pair_scores(ExportJob(str(pairs), str(probs),
                                          "dice-prob-v1"))
    print(f"probs: {report.count} rows ({report.value_range})")

    scores = out_rel / "pair_scores.jsonl"
    report = export_pair_scores(ExportJob(str(pairs), str(scores),
                                          "overlap-reg-v1"))
    print(f"scores: {report.count} rows ({report.value_range})")
    shutil.rmtree(SCRATCH)


if __name__ == "__main__":
    main()
