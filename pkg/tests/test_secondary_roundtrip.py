"""Round trip through the files the companion exporter tool produces.

The exporter lives in embed_export/ and is developed against the same
interchange contracts (vector file, pair-score JSONL). These tests consume
its committed outputs under fixtures/secondary/ without importing it, to
prove the file formats alone are a sufficient integration surface.
"""
import hashlib
import json
import math
from pathlib import Path

import pytest

from scicomm_drift.findings import finding_id
from scicomm_drift.pairs import generate_pairs
from scicomm_drift.scoring import (
    ExternalScoreTable, ProbabilityScorer, read_value_table,
)
from scicomm_drift.similarity import load_vectors

SECONDARY = Path(__file__).parent / "fixtures" / "secondary"

pytestmark = pytest.mark.skipif(
    not SECONDARY.exists(),
    reason="exporter fixture outputs not generated",
)


@pytest.fixture(scope="module")
def provider():
    return load_vectors(SECONDARY / "findings_vectors.spcv")


def test_vector_file_covers_every_finding(provider, mini_findings):
    expected = {finding_id(f.doc_id, f.sent_idx)
                for fs in mini_findings.values() for f in fs}
    assert expected, "mini corpus produced no findings"
    assert set(provider.ids()) == expected
    assert provider.dim == 64


def test_vector_values_match_export_sidecar(provider):
    sidecar = {}
    with open(SECONDARY / "findings_vectors_expected.jsonl", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            sidecar[row["id"]] = row["values"]
    assert set(sidecar) == set(provider.ids())
    for vec_id, expected in sidecar.items():
        got = provider.embed(vec_id).values
        assert [float(v) for v in got] == expected


def test_vectors_are_unit_norm(provider):
    for vec_id in provider.ids():
        values = provider.embed(vec_id).values
        norm = math.sqrt(float((values ** 2).sum()))
        assert abs(norm - 1.0) <= 1e-6, vec_id


def test_pair_generation_runs_on_external_vectors(provider, mini_store,
                                                  mini_links, mini_findings):
    pairs = list(generate_pairs(mini_store, mini_links, mini_findings, provider))
    assert len(pairs) == 418
    for p in pairs:
        assert -1.0 <= p.cos_sim <= 1.0


def test_score_tables_cover_every_pair(provider, mini_store, mini_links,
                                       mini_findings):
    pair_ids = {p.pair_id for p in generate_pairs(mini_store, mini_links,
                                                  mini_findings, provider)}
    probs = read_value_table(SECONDARY / "pair_probs.jsonl")
    scores = read_value_table(SECONDARY / "pair_scores.jsonl")
    assert set(probs) == pair_ids
    assert set(scores) == pair_ids
    assert all(0.0 <= v <= 1.0 for v in probs.values())
    assert all(1.0 <= v <= 5.0 for v in scores.values())


def test_score_tables_feed_the_scorers(mini_store, mini_links, mini_findings,
                                       provider):
    pairs = list(generate_pairs(mini_store, mini_links, mini_findings, provider))
    prob_scorer = ProbabilityScorer(read_value_table(SECONDARY / "pair_probs.jsonl"))
    table_scorer = ExternalScoreTable(read_value_table(SECONDARY / "pair_scores.jsonl"))
    for p in pairs[:25]:
        a = prob_scorer.score(p.finding_paper, p.finding_mention, p.pair_id)
        b = table_scorer.score(p.finding_paper, p.finding_mention, p.pair_id)
        assert 1.0 <= a <= 5.0
        assert 1.0 <= b <= 5.0


@pytest.mark.parametrize("name", ["findings_vectors.spcv", "pair_probs.jsonl",
                                  "pair_scores.jsonl"])
def test_manifest_digests_match_files(name):
    manifest = json.loads((SECONDARY / f"{name}.manifest.json").read_text())
    actual = hashlib.sha256((SECONDARY / name).read_bytes()).hexdigest()
    assert manifest["output_sha256"] == actual
    assert manifest["tool"] == "embed-export"
