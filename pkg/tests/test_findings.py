"""Sentence splitting, the hashed-feature classifier, and finding extraction."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from scicomm_drift.corpus import Document, UserMeta
from scicomm_drift.errors import FormatError, ValidationError
from scicomm_drift.findings import (
    FINDING_LABELS, Finding, TrainConfig, evaluate_classifier,
    extract_findings, featurize, finding_id, load_model, loss_and_grad,
    predict, predict_proba, read_findings, save_model, split_sentences,
    train_classifier, write_findings,
)


def make_doc(text, kind="paper", doc_id="d1"):
    if kind == "tweet":
        return Document(doc_id=doc_id, source_kind="tweet", text=text,
                        linked_doi="10.1/x",
                        user_meta=UserMeta(is_verified=False, is_organization=False,
                                           followers=1, following=1,
                                           account_age_years=1.0))
    return Document(doc_id=doc_id, source_kind=kind, text=text, doi="10.1/x",
                    field="other")


# ------------------------------------------------------------- splitting

def test_split_basic_boundaries():
    doc = make_doc("We measured it. Then we found more! Was it real? Yes.")
    texts = [r.text for r in split_sentences(doc)]
    assert texts == ["We measured it.", "Then we found more!", "Was it real?", "Yes."]


def test_split_keeps_abbreviations_together():
    doc = make_doc("Results improved, e.g. Group A gained. Dr. Smith agreed.")
    texts = [r.text for r in split_sentences(doc)]
    assert texts == ["Results improved, e.g. Group A gained.", "Dr. Smith agreed."]


def test_split_et_al_two_token_abbreviation():
    doc = make_doc("This replicates Jones et al. Smith found the same.")
    texts = [r.text for r in split_sentences(doc)]
    assert len(texts) == 1


def test_split_decimal_point_not_a_boundary():
    doc = make_doc("The rate rose 3.5 percent. It fell later.")
    texts = [r.text for r in split_sentences(doc)]
    assert texts == ["The rate rose 3.5 percent.", "It fell later."]


def test_split_lowercase_continuation_not_a_boundary():
    doc = make_doc("It rose... then it fell. Done.")
    texts = [r.text for r in split_sentences(doc)]
    assert texts == ["It rose... then it fell.", "Done."]


def test_tweets_stay_whole():
    doc = make_doc("Wow. Science! Really?", kind="tweet")
    records = split_sentences(doc)
    assert len(records) == 1
    assert records[0].char_span == (0, len(doc.text))


def _span_invariants(doc):
    records = split_sentences(doc)
    covered = set()
    prev_end = -1
    for rec in records:
        lo, hi = rec.char_span
        assert doc.text[lo:hi] == rec.text
        assert lo > prev_end  # ordered, non-overlapping
        prev_end = hi - 1
        covered.update(range(lo, hi))
    for i, ch in enumerate(doc.text):
        if not ch.isspace():
            assert i in covered
    assert [r.sent_idx for r in records] == list(range(len(records)))


@settings(max_examples=150)
@given(st.text(alphabet="aA .?!3\n", max_size=60))
def test_split_span_invariants_hold(text):
    if not text.strip():
        return
    _span_invariants(make_doc(text))


def test_split_span_invariants_on_mini_corpus(mini_store):
    for doc in mini_store.all_documents():
        _span_invariants(doc)


# ------------------------------------------------------------ classifier

def test_featurize_position_validation():
    with pytest.raises(ValidationError):
        featurize("text", position=0.0)
    with pytest.raises(ValidationError):
        featurize("text", position=1.5)
    assert featurize("same words", hash_dim=64) == featurize("same words", hash_dim=64)


def test_featurize_empty_text_still_has_position_slot():
    feats = featurize("", position=0.25, hash_dim=64)
    assert len(feats) == 1
    assert pytest.approx(abs(next(iter(feats.values())))) == 0.25


TINY = [
    ("We found that x increased y.", "RESULTS"),
    ("We found that a decreased b.", "RESULTS"),
    ("Scientists found c rising in d.", "RESULTS"),
    ("We conclude that x matters.", "CONCLUSIONS"),
    ("These findings suggest y changed.", "CONCLUSIONS"),
    ("Overall the study concludes z.", "CONCLUSIONS"),
    ("We measured x in ten trials.", "METHODS"),
    ("Data were collected with surveys.", "METHODS"),
    ("Participants were assigned to groups.", "METHODS"),
    ("Previous studies reported x.", "BACKGROUND"),
    ("Prior work has linked a with b.", "BACKGROUND"),
    ("It is well known that c varies.", "BACKGROUND"),
    ("This study aimed to test x.", "OBJECTIVE"),
    ("We sought to quantify y.", "OBJECTIVE"),
    ("The objective was to examine z.", "OBJECTIVE"),
]


def test_gradient_matches_finite_differences():
    dim = 64
    texts = [t for t, _ in TINY[:6]]
    labels = ["RESULTS", "RESULTS", "RESULTS", "CONCLUSIONS", "CONCLUSIONS", "CONCLUSIONS"]
    classes = sorted(set(labels))
    rows = [featurize(t, hash_dim=dim) for t in texts]
    indptr, indices, data = [0], [], []
    for feats in rows:
        indices.extend(feats.keys())
        data.extend(feats.values())
        indptr.append(len(indices))
    X = sparse.csr_matrix((data, indices, indptr), shape=(len(texts), dim))
    Y = np.zeros((len(texts), len(classes)))
    for i, lab in enumerate(labels):
        Y[i, classes.index(lab)] = 1.0

    rng = np.random.default_rng(11)
    W = rng.normal(scale=0.1, size=(dim, len(classes)))
    b = rng.normal(scale=0.1, size=len(classes))
    l2 = 1e-3
    _, grad_w, grad_b = loss_and_grad(X, Y, W, b, l2)

    eps = 1e-6
    for i, j in [(0, 0), (5, 1), (17, 0), (33, 1), (63, 0)]:
        bump = np.zeros_like(W)
        bump[i, j] = eps
        hi = loss_and_grad(X, Y, W + bump, b, l2)[0]
        lo = loss_and_grad(X, Y, W - bump, b, l2)[0]
        assert grad_w[i, j] == pytest.approx((hi - lo) / (2 * eps), abs=1e-5)
    for j in range(len(classes)):
        bump = np.zeros_like(b)
        bump[j] = eps
        hi = loss_and_grad(X, Y, W, b + bump, l2)[0]
        lo = loss_and_grad(X, Y, W, b - bump, l2)[0]
        assert grad_b[j] == pytest.approx((hi - lo) / (2 * eps), abs=1e-5)


def test_training_loss_decreases_and_converges():
    model = train_classifier(TINY, TrainConfig(hash_dim=1 << 10))
    losses = [s.loss for s in model.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert model.converged
    assert predict(model, [t for t, _ in TINY]) == [l for _, l in TINY]


def test_training_is_bitwise_deterministic():
    m1 = train_classifier(TINY, TrainConfig(hash_dim=1 << 10))
    m2 = train_classifier(TINY, TrainConfig(hash_dim=1 << 10))
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)
    assert [s.loss for s in m1.history] == [s.loss for s in m2.history]


def test_training_input_validation():
    with pytest.raises(ValidationError):
        train_classifier([])
    with pytest.raises(ValidationError):
        train_classifier([("one class only", "RESULTS")])


def test_predict_proba_rows_sum_to_one():
    model = train_classifier(TINY, TrainConfig(hash_dim=1 << 10))
    proba = predict_proba(model, ["We found that q rose.", "totally new words"])
    assert proba.shape == (2, 5)
    assert np.allclose(proba.sum(axis=1), 1.0)


def test_model_save_load_roundtrip(tmp_path):
    model = train_classifier(TINY, TrainConfig(hash_dim=1 << 10))
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.classes == model.classes
    assert loaded.hash_dim == model.hash_dim
    # weights persist as f32
    assert np.array_equal(loaded.weights,
                          model.weights.astype("<f4").astype(np.float64))
    texts = [t for t, _ in TINY]
    assert predict(loaded, texts) == predict(model, texts)


def test_load_model_rejects_corruption(tmp_path):
    model = train_classifier(TINY, TrainConfig(hash_dim=1 << 8))
    path = tmp_path / "model.bin"
    save_model(model, path)
    blob = path.read_bytes()

    path.write_bytes(blob[:2])
    with pytest.raises(FormatError):
        load_model(path)
    path.write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        load_model(path)
    path.write_bytes(b"\xff\xff\xff\x7f" + blob[4:])
    with pytest.raises(FormatError):
        load_model(path)


# ------------------------------------------------------------ extraction

def test_extract_findings_keeps_only_finding_labels(classifier):
    doc = make_doc("Previous studies reported interest in caffeine. "
                   "We measured memory recall in 40 adults using surveys. "
                   "We found that caffeine sharply increased memory recall by 12 percent in adults. "
                   "We conclude that caffeine has a strongly lasting influence on memory recall among adults.")
    found = extract_findings(classifier, doc)
    assert [f.sent_idx for f in found] == [2, 3]
    assert all(f.label in FINDING_LABELS for f in found)
    assert all(0.0 < f.prob <= 1.0 for f in found)


def test_finding_id_format():
    assert finding_id("doc9", 4) == "doc9#4"


def test_findings_file_roundtrip(tmp_path):
    rows = [Finding("b", 1, "t1", "RESULTS", 0.9),
            Finding("a", 0, "t2", "CONCLUSIONS", 0.8),
            Finding("a", 2, "t3", "RESULTS", 0.7)]
    path = tmp_path / "findings.jsonl"
    assert write_findings(rows, path) == 3
    grouped = read_findings(path)
    assert list(grouped) == ["a", "b"]
    assert [f.sent_idx for f in grouped["a"]] == [0, 2]
    assert grouped["b"][0].text == "t1"


def test_read_findings_rejects_missing_keys(tmp_path):
    path = tmp_path / "findings.jsonl"
    path.write_text('{"doc_id":"a","sent_idx":0}\n', encoding="utf-8")
    with pytest.raises(ValidationError) as err:
        read_findings(path)
    assert "findings.jsonl:1" in str(err.value)


def test_evaluate_classifier_on_training_set(classifier, labeled_train):
    report = evaluate_classifier(classifier, labeled_train[:500])
    assert report.accuracy > 0.95
    assert set(report.per_class) <= {"BACKGROUND", "CONCLUSIONS", "METHODS",
                                     "OBJECTIVE", "RESULTS"}
    for metrics in report.per_class.values():
        assert 0.0 <= metrics.f1 <= 1.0
    with pytest.raises(ValidationError):
        evaluate_classifier(classifier, [])
