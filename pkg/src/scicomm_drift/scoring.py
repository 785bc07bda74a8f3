"""Scoring finding pairs on the 1..5 information-matching scale.

Scorers wrap different signal sources (embedding cosine, externally
computed match probabilities, precomputed score tables, lexical overlap)
behind one interface so evaluation and corpus-wide scoring are reusable.
All scorer output is clamped to [1, 5].
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .annotations import AggregatedPair, PROVENANCE_ANNOTATED, PROVENANCE_EXPERT
from .errors import ValidationError
from .pairs import CandidatePair, _PAIR_KEYS
from .similarity import EmbeddingProvider, cosine_similarity, jaccard_index

logger = logging.getLogger(__name__)


class PairScorer(Protocol):
    def score(self, finding_paper: str, finding_mention: str,
              pair_id: str | None = None) -> float: ...


def _clamp(value: float) -> float:
    return max(1.0, min(5.0, value))


class CosineSimilarityScorer:
    """1 + 4 * max(0, cos) over provider embeddings of the two texts."""

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider

    def score(self, finding_paper: str, finding_mention: str,
              pair_id: str | None = None) -> float:
        a = self.provider.embed(finding_paper)
        b = self.provider.embed(finding_mention)
        cos = cosine_similarity(a.values, b.values)
        return _clamp(1.0 + 4.0 * max(0.0, cos))


class ProbabilityScorer:
    """Map an externally computed match probability in [0, 1] to 1 + 4p."""

    def __init__(self, table: dict[str, float]):
        for pid, p in table.items():
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"pair {pid}: probability {p} outside [0, 1]")
        self.table = table

    def score(self, finding_paper: str, finding_mention: str,
              pair_id: str | None = None) -> float:
        if pair_id is None or pair_id not in self.table:
            raise ValidationError(f"no probability for pair {pair_id!r}")
        return _clamp(1.0 + 4.0 * self.table[pair_id])


class ExternalScoreTable:
    """Scores already on the 1..5 scale, keyed by pair_id.

    Values may overrun the scale by at most 1e-6 (float noise from the
    producing model); anything further out is an error.
    """

    def __init__(self, table: dict[str, float]):
        for pid, v in table.items():
            if not (1.0 - 1e-6) <= v <= (5.0 + 1e-6):
                raise ValidationError(f"pair {pid}: score {v} outside [1, 5]")
        self.table = {pid: _clamp(v) for pid, v in table.items()}

    def score(self, finding_paper: str, finding_mention: str,
              pair_id: str | None = None) -> float:
        if pair_id is None or pair_id not in self.table:
            raise ValidationError(f"no score for pair {pair_id!r}")
        return self.table[pair_id]


class LexicalOverlapScorer:
    """Word-overlap baseline: 1 + 4 * jaccard."""

    def score(self, finding_paper: str, finding_mention: str,
              pair_id: str | None = None) -> float:
        return _clamp(1.0 + 4.0 * jaccard_index(finding_paper, finding_mention))


def read_value_table(path: str | Path) -> dict[str, float]:
    """JSON lines {"pair_id", "value"}; '#' lines are header comments."""
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                pid, value = obj["pair_id"], float(obj["value"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            if pid in table:
                raise ValidationError(f"{path}:{line_no}: duplicate pair_id {pid!r}")
            table[pid] = value
    return table


def mse(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    if len(y_true) != len(y_pred):
        raise ValidationError(f"mse: length mismatch {len(y_true)} vs {len(y_pred)}")
    if not y_true:
        raise ValidationError("mse: empty input")
    return sum((a - b) ** 2 for a, b in zip(y_true, y_pred)) / len(y_true)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValidationError(f"pearson_r: length mismatch {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise ValidationError("pearson_r: need at least two points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0.0 or syy == 0.0:
        raise ValidationError("pearson_r: zero variance input")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return sxy / math.sqrt(sxx * syy)


@dataclass
class SubsetMetrics:
    n: int
    mse: float
    pearson_r: float | None


@dataclass
class EvalReport:
    overall: SubsetMetrics
    news: SubsetMetrics | None
    tweets: SubsetMetrics | None


@dataclass
class EvalItem:
    """One human-rated pair joined with its texts for scoring."""
    pair_id: str
    finding_paper: str
    finding_mention: str
    source_kind: str
    ims: float


def join_eval_items(aggregated: Sequence[AggregatedPair],
                    pairs_by_id: dict[str, CandidatePair],
                    split: str | None = None) -> list[EvalItem]:
    """Join aggregated scores with pair texts, keeping human-rated pairs.

    Auto-labeled pairs are excluded: their scores restate the similarity
    thresholds, so evaluating on them would be circular.
    """
    items: list[EvalItem] = []
    for agg in aggregated:
        if agg.provenance not in (PROVENANCE_ANNOTATED, PROVENANCE_EXPERT):
            continue
        if split is not None and agg.split != split:
            continue
        pair = pairs_by_id.get(agg.pair_id)
        if pair is None:
            raise ValidationError(f"aggregated pair {agg.pair_id} has no pair record")
        items.append(EvalItem(pair_id=agg.pair_id, finding_paper=pair.finding_paper,
                              finding_mention=pair.finding_mention,
                              source_kind=pair.source_kind, ims=agg.ims))
    return items


def _subset_metrics(y: list[float], yhat: list[float]) -> SubsetMetrics:
    r: float | None
    try:
        r = pearson_r(y, yhat)
    except ValidationError:
        r = None
    return SubsetMetrics(n=len(y), mse=mse(y, yhat), pearson_r=r)


def evaluate_scorer(scorer: PairScorer, items: Sequence[EvalItem]) -> EvalReport:
    """Score every item and report MSE and Pearson r overall and by source.

    The overall count always equals the news count plus the tweet count.
    """
    if not items:
        raise ValidationError("evaluate_scorer: no evaluation items")
    y: list[float] = []
    yhat: list[float] = []
    by_kind: dict[str, tuple[list[float], list[float]]] = {
        "news": ([], []), "tweet": ([], [])}
    for item in items:
        if item.source_kind not in by_kind:
            raise ValidationError(
                f"pair {item.pair_id}: unexpected source_kind {item.source_kind!r}")
        pred = scorer.score(item.finding_paper, item.finding_mention, item.pair_id)
        y.append(item.ims)
        yhat.append(pred)
        by_kind[item.source_kind][0].append(item.ims)
        by_kind[item.source_kind][1].append(pred)
    news = _subset_metrics(*by_kind["news"]) if by_kind["news"][0] else None
    tweets = _subset_metrics(*by_kind["tweet"]) if by_kind["tweet"][0] else None
    return EvalReport(overall=_subset_metrics(y, yhat), news=news, tweets=tweets)


@dataclass
class ScoreCounters:
    n_scored: int = 0
    n_matched: int = 0


def score_corpus(scorer: PairScorer, pairs: Iterable[CandidatePair],
                 out_path: str | Path, threshold: float = 3.0,
                 progress_every: int = 10000) -> ScoreCounters:
    """Stream pairs through the scorer, keeping those above the match bar.

    Matched means strictly greater than ``threshold``. Output rows repeat
    the pair record plus an ``ims_pred`` field; input order is preserved,
    so the output is a pure function of the input stream.
    """
    counters = ScoreCounters()
    with open(out_path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            pred = scorer.score(pair.finding_paper, pair.finding_mention, pair.pair_id)
            counters.n_scored += 1
            if pred > threshold:
                counters.n_matched += 1
                row = {k: getattr(pair, k) for k in _PAIR_KEYS}
                row["ims_pred"] = pred
                fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
                fh.write("\n")
            if counters.n_scored % progress_every == 0:
                logger.info("scored %d pairs (%d matched)",
                            counters.n_scored, counters.n_matched)
    return counters


def read_matched(path: str | Path) -> list[dict]:
    """Rows written by score_corpus: pair fields plus ims_pred."""
    rows: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                obj["ims_pred"] = float(obj["ims_pred"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            rows.append(obj)
    return rows
