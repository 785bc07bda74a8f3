"""Shared fixtures: the bundled mini corpus and a trained classifier.

Session scope keeps the one training run and corpus load shared across
test modules; everything here is deterministic, so sharing is safe.
"""
import json
from pathlib import Path

import pytest

from scicomm_drift.corpus import link_mentions, load_corpus_dir
from scicomm_drift.findings import TrainConfig, extract_findings, train_classifier

FIXTURES = Path(__file__).parent / "fixtures"


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            rows.append(json.loads(line))
    return rows


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def labeled_train():
    return [(r["text"], r["label"]) for r in read_jsonl(FIXTURES / "train_sentences.jsonl")]


@pytest.fixture(scope="session")
def labeled_eval():
    return [(r["text"], r["label"]) for r in read_jsonl(FIXTURES / "eval_sentences.jsonl")]


@pytest.fixture(scope="session")
def classifier(labeled_train):
    return train_classifier(labeled_train, TrainConfig())


@pytest.fixture(scope="session")
def mini_store():
    store, report = load_corpus_dir(FIXTURES / "mini_corpus")
    assert not report.rejected
    return store


@pytest.fixture(scope="session")
def mini_links(mini_store):
    return link_mentions(mini_store)


@pytest.fixture(scope="session")
def mini_findings(classifier, mini_store):
    return {doc.doc_id: extract_findings(classifier, doc)
            for doc in mini_store.all_documents()}
