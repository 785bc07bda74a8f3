"""Finding extraction: sentence splitting and rhetorical classification.

A finding is a sentence that states what a study showed. Papers and news
are split into sentences by a rule-based splitter; a hashed-feature
multinomial logistic regression tags each sentence with a rhetorical role,
and the RESULTS / CONCLUSIONS sentences become findings. Tweets are short
enough to pass through whole.
"""
from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import Document
from .errors import FormatError, ValidationError
from .hashing import signed_slot
from .textutil import tokenize

RHETORICAL_LABELS = ("BACKGROUND", "CONCLUSIONS", "METHODS", "OBJECTIVE", "RESULTS")

#: Rhetorical roles whose sentences count as findings.
FINDING_LABELS = ("CONCLUSIONS", "RESULTS")

_MODEL_FORMAT = "scd-logreg"
_POSITION_KEY = "\x00pos"
_BOUNDARY_RE = re.compile(r"[.?!]+")


def _load_abbreviations() -> frozenset[str]:
    text = resources.files("scicomm_drift").joinpath("data/abbreviations.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())

_ABBREVIATIONS = _load_abbreviations()


@dataclass
class SentenceRecord:
    doc_id: str
    sent_idx: int
    text: str
    char_span: tuple[int, int]


def _is_boundary(text: str, punct_end: int) -> bool:
    """True if the punctuation run ending at punct_end ends a sentence."""
    rest = text[punct_end:]
    if not rest:
        return False  # end of text; the final segment closes on its own
    stripped = rest.lstrip()
    if len(stripped) == len(rest) or not stripped:
        # No whitespace after the punctuation (decimal point, "e.g.x"),
        # or nothing but trailing whitespace remains.
        return False
    nxt = stripped[0]
    if not (nxt.isupper() or nxt.isdigit()):
        return False
    tail = text[:punct_end]
    one = re.search(r"(\S+)$", tail)
    if one and one.group(1).lower() in _ABBREVIATIONS:
        return False
    two = re.search(r"(\S+\s+\S+)$", tail)
    if two and re.sub(r"\s+", " ", two.group(1).lower()) in _ABBREVIATIONS:
        return False
    return True


def split_sentences(doc: Document) -> list[SentenceRecord]:
    """Split a document into sentence records with source spans.

    Splits after [.?!] runs that are followed by whitespace and an
    uppercase letter or digit, unless the preceding token is a known
    abbreviation. Tweets are returned as a single record spanning the full
    text. Spans are code-point offsets; each record's text equals the
    document slice, and together the spans cover every non-whitespace
    character.
    """
    text = doc.text
    if doc.source_kind == "tweet":
        return [SentenceRecord(doc.doc_id, 0, text, (0, len(text)))]
    boundaries = [m.end() for m in _BOUNDARY_RE.finditer(text) if _is_boundary(text, m.end())]
    records: list[SentenceRecord] = []
    start = 0
    for cut in boundaries + [len(text)]:
        segment = text[start:cut]
        lead = len(segment) - len(segment.lstrip())
        trail = len(segment) - len(segment.rstrip())
        lo, hi = start + lead, cut - trail
        if hi > lo:
            records.append(SentenceRecord(doc.doc_id, len(records), text[lo:hi], (lo, hi)))
        start = cut
    return records


def featurize(text: str, position: float = 0.5, hash_dim: int = 1 << 18) -> dict[int, float]:
    """Signed-hash features for one sentence.

    Buckets hold lowercase word unigrams and bigrams, character trigrams of
    the raw lowercased text, and one normalized-position slot whose value is
    ``position`` (document-relative, in (0, 1]; defaults to the middle).
    """
    if not 0.0 < position <= 1.0:
        raise ValidationError(f"position must be in (0, 1], got {position}")
    features: dict[int, float] = {}

    def bump(key: str, value: float) -> None:
        slot, sign = signed_slot(key, hash_dim)
        features[slot] = features.get(slot, 0.0) + sign * value

    words = tokenize(text)
    for w in words:
        bump("w1:" + w, 1.0)
    for a, b in zip(words, words[1:]):
        bump("w2:" + a + " " + b, 1.0)
    lowered = text.lower()
    for i in range(len(lowered) - 2):
        bump("c3:" + lowered[i:i + 3], 1.0)
    bump(_POSITION_KEY, position)
    return features


def _feature_matrix(texts: Sequence[str], positions: Sequence[float] | None,
                    hash_dim: int) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for i, text in enumerate(texts):
        pos = positions[i] if positions is not None else 0.5
        feats = featurize(text, pos, hash_dim)
        indices.extend(feats.keys())
        data.extend(feats.values())
        indptr.append(len(indices))
    return sparse.csr_matrix((data, indices, indptr), shape=(len(texts), hash_dim))


@dataclass
class TrainConfig:
    hash_dim: int = 1 << 18
    l2_penalty: float = 1e-4
    max_epochs: int = 200
    tol: float = 1e-4
    seed: int = 0


@dataclass
class EpochStat:
    epoch: int
    loss: float
    grad_norm: float
    step: float


@dataclass
class SentenceClassifier:
    classes: tuple[str, ...]
    hash_dim: int
    weights: np.ndarray      # (hash_dim, n_classes)
    bias: np.ndarray         # (n_classes,)
    l2_penalty: float
    seed: int
    history: list[EpochStat] = dc_field(default_factory=list)
    converged: bool = False


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _penalized_loss(X: sparse.csr_matrix, Y: np.ndarray, W: np.ndarray, b: np.ndarray,
                    l2: float) -> tuple[float, np.ndarray]:
    n = X.shape[0]
    logits = X @ W + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    true_logit = shifted[np.arange(n), Y.argmax(axis=1)]
    loss = float(-(true_logit - log_z).mean() + 0.5 * l2 * float((W * W).sum()))
    return loss, logits


def _grad_from_logits(X: sparse.csr_matrix, Y: np.ndarray, logits: np.ndarray,
                      W: np.ndarray, l2: float) -> tuple[np.ndarray, np.ndarray]:
    R = (_softmax(logits) - Y) / X.shape[0]
    grad_w = np.asarray(X.T @ R) + l2 * W
    grad_b = R.sum(axis=0)
    return grad_w, grad_b


def loss_and_grad(X: sparse.csr_matrix, Y: np.ndarray, W: np.ndarray, b: np.ndarray,
                  l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy with an L2 penalty on the weights (not the bias)."""
    loss, logits = _penalized_loss(X, Y, W, b, l2)
    grad_w, grad_b = _grad_from_logits(X, Y, logits, W, l2)
    return loss, grad_w, grad_b


def train_classifier(labeled: Iterable[tuple[str, str]],
                     hyper: TrainConfig | None = None,
                     positions: Sequence[float] | None = None) -> SentenceClassifier:
    """Fit the rhetorical classifier by full-batch gradient descent.

    Backtracking line search (Armijo) guarantees the recorded loss decreases
    every epoch; training stops when the gradient max-norm falls under
    ``tol`` or after ``max_epochs``. With zero initialization the run is
    deterministic, so identical inputs give bitwise-identical weights.
    """
    hyper = hyper or TrainConfig()
    pairs = list(labeled)
    if not pairs:
        raise ValidationError("train_classifier: empty training set")
    texts = [t for t, _ in pairs]
    labels = [l for _, l in pairs]
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValidationError("train_classifier: need at least two classes")
    class_idx = {c: i for i, c in enumerate(classes)}
    X = _feature_matrix(texts, positions, hyper.hash_dim)
    Y = np.zeros((len(pairs), len(classes)))
    Y[np.arange(len(pairs)), [class_idx[l] for l in labels]] = 1.0

    W = np.zeros((hyper.hash_dim, len(classes)))
    b = np.zeros(len(classes))
    history: list[EpochStat] = []
    converged = False
    step = 1.0
    loss, logits = _penalized_loss(X, Y, W, b, hyper.l2_penalty)
    grad_w, grad_b = _grad_from_logits(X, Y, logits, W, hyper.l2_penalty)
    for epoch in range(1, hyper.max_epochs + 1):
        grad_norm = max(float(np.abs(grad_w).max()), float(np.abs(grad_b).max()))
        if grad_norm < hyper.tol:
            converged = True
            break
        grad_sq = float((grad_w * grad_w).sum() + (grad_b * grad_b).sum())
        step = min(step * 2.0, 1e4)
        while True:
            new_w = W - step * grad_w
            new_b = b - step * grad_b
            # Trial points need only the loss; the gradient is recomputed
            # once on the accepted point below.
            new_loss, new_logits = _penalized_loss(X, Y, new_w, new_b, hyper.l2_penalty)
            if new_loss <= loss - 1e-4 * step * grad_sq:
                break
            step *= 0.5
            if step < 1e-12:
                # Gradient numerically flat; cannot make progress.
                converged = True
                break
        if step < 1e-12:
            break
        W, b, loss = new_w, new_b, new_loss
        grad_w, grad_b = _grad_from_logits(X, Y, new_logits, W, hyper.l2_penalty)
        history.append(EpochStat(epoch=epoch, loss=loss, grad_norm=grad_norm, step=step))
    return SentenceClassifier(classes=classes, hash_dim=hyper.hash_dim, weights=W,
                              bias=b, l2_penalty=hyper.l2_penalty, seed=hyper.seed,
                              history=history, converged=converged)


def predict_proba(model: SentenceClassifier, texts: Sequence[str],
                  positions: Sequence[float] | None = None) -> np.ndarray:
    """Class probabilities, one row per text; each row sums to 1."""
    X = _feature_matrix(texts, positions, model.hash_dim)
    return _softmax(np.asarray(X @ model.weights) + model.bias)


def predict(model: SentenceClassifier, texts: Sequence[str],
            positions: Sequence[float] | None = None) -> list[str]:
    proba = predict_proba(model, texts, positions)
    return [model.classes[i] for i in proba.argmax(axis=1)]


@dataclass
class Finding:
    doc_id: str
    sent_idx: int
    text: str
    label: str
    prob: float


def finding_id(doc_id: str, sent_idx: int) -> str:
    """Stable key for one finding, used by vector files and exports."""
    return f"{doc_id}#{sent_idx}"


def extract_findings(model: SentenceClassifier, doc: Document,
                     finding_labels: Sequence[str] = FINDING_LABELS) -> list[Finding]:
    """Classify a document's sentences and keep the finding-bearing ones."""
    records = split_sentences(doc)
    if not records:
        return []
    proba = predict_proba(model, [r.text for r in records])
    out: list[Finding] = []
    wanted = set(finding_labels)
    for record, row in zip(records, proba):
        label = model.classes[int(row.argmax())]
        if label in wanted:
            out.append(Finding(doc_id=doc.doc_id, sent_idx=record.sent_idx,
                               text=record.text, label=label, prob=float(row.max())))
    return out


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassifierReport:
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    accuracy: float


def evaluate_classifier(model: SentenceClassifier,
                        labeled: Iterable[tuple[str, str]]) -> ClassifierReport:
    """Per-class precision/recall/F1 plus macro-F1 over classes present in
    the held-out data (absent classes are left out of the macro mean)."""
    pairs = list(labeled)
    if not pairs:
        raise ValidationError("evaluate_classifier: empty held-out set")
    texts = [t for t, _ in pairs]
    gold = [l for _, l in pairs]
    pred = predict(model, texts)
    present = sorted(set(gold))
    per_class: dict[str, ClassMetrics] = {}
    for cls in present:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = ClassMetrics(precision, recall, f1, tp + fn)
    macro_f1 = sum(m.f1 for m in per_class.values()) / len(per_class)
    accuracy = sum(1 for g, p in zip(gold, pred) if g == p) / len(pairs)
    return ClassifierReport(per_class=per_class, macro_f1=macro_f1, accuracy=accuracy)


_FINDING_KEYS = ("doc_id", "sent_idx", "text", "label", "prob")


def write_findings(findings: Iterable[Finding], path: str | Path) -> int:
    """One JSON object per finding, ordered by (doc_id, sent_idx)."""
    rows = sorted(findings, key=lambda f: (f.doc_id, f.sent_idx))
    with open(path, "w", encoding="utf-8") as fh:
        for f in rows:
            obj = {k: getattr(f, k) for k in _FINDING_KEYS}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    return len(rows)


def read_findings(path: str | Path) -> dict[str, list[Finding]]:
    """Findings grouped by doc_id, each list in sentence order."""
    grouped: dict[str, list[Finding]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                missing = set(_FINDING_KEYS) - set(obj)
                if missing:
                    raise ValidationError(f"missing keys {sorted(missing)}")
                f = Finding(doc_id=str(obj["doc_id"]), sent_idx=int(obj["sent_idx"]),
                            text=str(obj["text"]), label=str(obj["label"]),
                            prob=float(obj["prob"]))
            except (json.JSONDecodeError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            grouped.setdefault(f.doc_id, []).append(f)
    for rows in grouped.values():
        rows.sort(key=lambda f: f.sent_idx)
    return grouped


def save_model(model: SentenceClassifier, path: str | Path) -> None:
    """Serialize as a length-prefixed JSON header plus an f32 weight block."""
    header = {
        "format": _MODEL_FORMAT,
        "version": 1,
        "classes": list(model.classes),
        "hash_dim": model.hash_dim,
        "l2_penalty": model.l2_penalty,
        "seed": model.seed,
        "converged": model.converged,
        "epochs_run": len(model.history),
        "final_loss": model.history[-1].loss if model.history else None,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.bias.astype("<f4").tobytes())


def load_model(path: str | Path) -> SentenceClassifier:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated model file")
    (hlen,) = struct.unpack_from("<I", blob, 0)
    if 4 + hlen > len(blob):
        raise FormatError(f"{path}: header overruns file")
    try:
        header = json.loads(blob[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad model header: {exc}") from exc
    if header.get("format") != _MODEL_FORMAT or header.get("version") != 1:
        raise FormatError(f"{path}: unsupported model format")
    classes = tuple(header["classes"])
    hash_dim = int(header["hash_dim"])
    expected = 4 + hlen + 4 * (hash_dim * len(classes) + len(classes))
    if len(blob) != expected:
        raise FormatError(f"{path}: weight block size mismatch "
                          f"({len(blob)} bytes, expected {expected})")
    flat = np.frombuffer(blob, dtype="<f4", count=hash_dim * len(classes), offset=4 + hlen)
    weights = flat.astype(np.float64).reshape(hash_dim, len(classes))
    bias = np.frombuffer(blob, dtype="<f4", count=len(classes),
                         offset=4 + hlen + 4 * hash_dim * len(classes)).astype(np.float64)
    return SentenceClassifier(classes=classes, hash_dim=hash_dim, weights=weights,
                              bias=bias, l2_penalty=float(header.get("l2_penalty", 0.0)),
                              seed=int(header.get("seed", 0)),
                              converged=bool(header.get("converged", False)))
