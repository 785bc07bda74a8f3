"""Pair scorers, evaluation metrics, and corpus-wide scoring output."""
import json
import random

import numpy as np
import pytest

from scicomm_drift.annotations import AggregatedPair
from scicomm_drift.errors import ValidationError
from scicomm_drift.pairs import CandidatePair
from scicomm_drift.scoring import (
    CosineSimilarityScorer, EvalItem, ExternalScoreTable, LexicalOverlapScorer,
    ProbabilityScorer, evaluate_scorer, join_eval_items, mse, pearson_r,
    read_matched, read_value_table, score_corpus,
)
from scicomm_drift.similarity import TfidfProvider, fit_tfidf


def mk_pair(pid, kind="news", paper="caffeine helps recall", mention="caffeine helps recall"):
    return CandidatePair(pair_id=pid, paper_doi="10.1/a", field="other",
                         source_kind=kind, finding_paper=paper,
                         finding_mention=mention, cos_sim=0.5, jaccard=0.5)


def agg(pid, ims, provenance="annotated", split=None):
    return AggregatedPair(pair_id=pid, ims=ims, n_ratings=3, rating_std=0.4,
                         flagged_outlier=False, provenance=provenance, split=split)


# --------------------------------------------------------------- scorers

def test_cosine_scorer_range_and_monotonicity():
    provider = TfidfProvider(fit_tfidf(
        ["caffeine improves recall", "tides rise near coasts"], hash_dim=256))
    scorer = CosineSimilarityScorer(provider)
    same = scorer.score("caffeine improves recall", "caffeine improves recall")
    other = scorer.score("caffeine improves recall", "tides rise near coasts")
    assert same == pytest.approx(5.0)
    assert 1.0 <= other < same


def test_probability_scorer_maps_and_validates():
    scorer = ProbabilityScorer({"p1": 0.0, "p2": 0.5, "p3": 1.0})
    assert scorer.score("", "", "p1") == 1.0
    assert scorer.score("", "", "p2") == 3.0
    assert scorer.score("", "", "p3") == 5.0
    with pytest.raises(ValidationError):
        scorer.score("", "", "missing")
    with pytest.raises(ValidationError):
        ProbabilityScorer({"p": 1.2})


def test_external_table_tolerates_float_noise_only():
    table = ExternalScoreTable({"p": 5.0 + 5e-7, "q": 1.0 - 5e-7})
    assert table.score("", "", "p") == 5.0
    assert table.score("", "", "q") == 1.0
    with pytest.raises(ValidationError):
        ExternalScoreTable({"p": 5.1})
    with pytest.raises(ValidationError):
        table.score("", "", None)


def test_lexical_scorer():
    scorer = LexicalOverlapScorer()
    assert scorer.score("a b", "a b") == 5.0
    assert scorer.score("a b", "c d") == 1.0


def test_read_value_table(tmp_path):
    path = tmp_path / "vals.jsonl"
    path.write_text('# scale: 1..5\n{"pair_id":"p","value":3.25}\n', encoding="utf-8")
    assert read_value_table(path) == {"p": 3.25}
    path.write_text('{"pair_id":"p","value":1}\n{"pair_id":"p","value":2}\n',
                    encoding="utf-8")
    with pytest.raises(ValidationError):
        read_value_table(path)


# --------------------------------------------------------------- metrics

def test_mse_and_pearson_against_numpy():
    rnd = random.Random(55)
    for _ in range(100):
        n = rnd.randrange(2, 30)
        y = [rnd.uniform(1, 5) for _ in range(n)]
        yhat = [rnd.uniform(1, 5) for _ in range(n)]
        assert mse(y, yhat) == pytest.approx(
            float(np.mean((np.array(y) - np.array(yhat)) ** 2)), abs=1e-12)
        expected_r = float(np.corrcoef(y, yhat)[0, 1])
        assert pearson_r(y, yhat) == pytest.approx(expected_r, abs=1e-12)


def test_metric_validation():
    with pytest.raises(ValidationError):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(ValidationError):
        mse([], [])
    with pytest.raises(ValidationError):
        pearson_r([1.0], [1.0])
    with pytest.raises(ValidationError):
        pearson_r([2.0, 2.0], [1.0, 3.0])  # zero variance


# ------------------------------------------------------------ evaluation

def test_join_eval_items_keeps_human_rated_only():
    pairs = {p.pair_id: p for p in [mk_pair("p1"), mk_pair("p2"), mk_pair("p3")]}
    aggregated = [agg("p1", 4.0), agg("p2", 5.0, provenance="auto"),
                  agg("p3", 2.0, provenance="expert_override")]
    items = join_eval_items(aggregated, pairs)
    assert [i.pair_id for i in items] == ["p1", "p3"]


def test_join_eval_items_split_filter_and_missing_pair():
    pairs = {"p1": mk_pair("p1")}
    items = join_eval_items([agg("p1", 4.0, split="dev")], pairs, split="test")
    assert items == []
    with pytest.raises(ValidationError):
        join_eval_items([agg("p9", 4.0)], pairs)


def test_evaluate_scorer_subset_counts_add_up():
    items = [EvalItem("p1", "a b", "a b", "news", 5.0),
             EvalItem("p2", "a b", "c d", "news", 1.0),
             EvalItem("p3", "a b", "a d", "tweet", 3.0)]
    report = evaluate_scorer(LexicalOverlapScorer(), items)
    assert report.overall.n == 3
    assert report.news.n == 2
    assert report.tweets.n == 1
    assert report.overall.n == report.news.n + report.tweets.n
    assert report.tweets.pearson_r is None  # single point has no correlation


def test_evaluate_scorer_validation():
    with pytest.raises(ValidationError):
        evaluate_scorer(LexicalOverlapScorer(), [])
    bad = [EvalItem("p", "a", "a", "paper", 5.0)]
    with pytest.raises(ValidationError):
        evaluate_scorer(LexicalOverlapScorer(), bad)


# ---------------------------------------------------------- corpus score

def test_score_corpus_strictly_above_threshold(tmp_path):
    pairs = [mk_pair("hit", mention="caffeine helps recall"),
             mk_pair("miss", mention="unrelated words entirely")]
    out = tmp_path / "matched.jsonl"
    counters = score_corpus(LexicalOverlapScorer(), pairs, out, threshold=3.0)
    assert counters.n_scored == 2
    assert counters.n_matched == 1
    rows = read_matched(out)
    assert [r["pair_id"] for r in rows] == ["hit"]
    assert rows[0]["ims_pred"] == 5.0
    assert rows[0]["source_kind"] == "news"


def test_score_corpus_threshold_boundary(tmp_path):
    # jaccard 0.5 scores exactly 3.0; "strictly above" excludes it at 3.0
    pairs = [mk_pair("edge", paper="a b", mention="a b c d")]
    out = tmp_path / "matched.jsonl"
    counters = score_corpus(LexicalOverlapScorer(), pairs, out, threshold=3.0)
    assert counters.n_matched == 0
    counters = score_corpus(LexicalOverlapScorer(), pairs, out, threshold=2.999)
    assert counters.n_matched == 1


def test_read_matched_rejects_missing_prediction(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"pair_id": "p"}) + "\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_matched(path)
