"""Evidence retrieval evaluation: BM25 ranking, MAP, and MRR.

Given claims with known gold evidence and a fixed evidence pool, rank the
pool per claim and report mean average precision and mean reciprocal rank.
Reciprocal rank follows the all-gold convention by default (mean over every
gold item's reciprocal rank, then over claims); the common first-relevant
variant is available by name.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .errors import ValidationError
from .scoring import PairScorer
from .textutil import tokenize


@dataclass
class Claim:
    claim_id: str
    text: str
    gold_evidence_ids: list[str]


def read_claims(path: str | Path) -> list[Claim]:
    """JSON lines {"claim_id", "text", "gold_evidence_ids"}."""
    claims: list[Claim] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                claim = Claim(obj["claim_id"], obj["text"],
                              list(obj["gold_evidence_ids"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            if not claim.gold_evidence_ids:
                raise ValidationError(
                    f"{path}:{line_no}: claim {claim.claim_id} has no gold evidence")
            if claim.claim_id in seen:
                raise ValidationError(
                    f"{path}:{line_no}: duplicate claim_id {claim.claim_id!r}")
            seen.add(claim.claim_id)
            claims.append(claim)
    return claims


def read_pool(path: str | Path) -> dict[str, str]:
    """JSON lines {"evidence_id", "text"} -> id to text mapping."""
    pool: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                eid, text = obj["evidence_id"], obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            if eid in pool:
                raise ValidationError(f"{path}:{line_no}: duplicate evidence_id {eid!r}")
            pool[eid] = text
    return pool


class EvidenceRanker(Protocol):
    def score(self, query: str, evidence_id: str, evidence_text: str) -> float: ...


class Bm25Index:
    """BM25 with Robertson/Sparck-Jones idf floored at zero.

    score(q, d) = sum over query tokens of
        idf(t) * tf(t, d) * (k1 + 1) / (tf(t, d) + k1 * (1 - b + b * |d| / avgdl))
    with idf(t) = max(0, ln((N - df + 0.5) / (df + 0.5))). The sum runs over
    the query token multiset, so repeated query words count repeatedly.
    """

    def __init__(self, pool: dict[str, str], k1: float = 1.2, b: float = 0.75):
        if not pool:
            raise ValidationError("Bm25Index: empty evidence pool")
        if k1 < 0 or not 0 <= b <= 1:
            raise ValidationError(f"Bm25Index: bad parameters k1={k1}, b={b}")
        self.k1 = k1
        self.b = b
        self.doc_terms: dict[str, dict[str, int]] = {}
        self.doc_len: dict[str, int] = {}
        df: dict[str, int] = {}
        for eid, text in pool.items():
            tokens = tokenize(text)
            counts: dict[str, int] = {}
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
            self.doc_terms[eid] = counts
            self.doc_len[eid] = len(tokens)
            for t in counts:
                df[t] = df.get(t, 0) + 1
        n_docs = len(pool)
        self.idf = {t: max(0.0, math.log((n_docs - c + 0.5) / (c + 0.5)))
                    for t, c in df.items()}
        self.default_idf = max(0.0, math.log((n_docs + 0.5) / 0.5))
        self.avgdl = sum(self.doc_len.values()) / n_docs

    def score(self, query: str, evidence_id: str, evidence_text: str = "") -> float:
        counts = self.doc_terms.get(evidence_id)
        if counts is None:
            raise ValidationError(f"Bm25Index: unknown evidence_id {evidence_id!r}")
        dl = self.doc_len[evidence_id]
        denom_scale = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
        total = 0.0
        for t in tokenize(query):
            tf = counts.get(t, 0)
            if tf == 0:
                continue
            idf = self.idf.get(t, self.default_idf)
            total += idf * tf * (self.k1 + 1.0) / (tf + denom_scale)
        return total


def build_bm25(pool: dict[str, str], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    return Bm25Index(pool, k1=k1, b=b)


class ScorerRanker:
    """Adapts a pair scorer to the ranking interface (claim, evidence text)."""

    def __init__(self, scorer: PairScorer):
        self.scorer = scorer

    def score(self, query: str, evidence_id: str, evidence_text: str) -> float:
        return self.scorer.score(evidence_text, query, None)


def rank_evidence(ranker: EvidenceRanker, claim: Claim,
                  pool: dict[str, str]) -> list[str]:
    """Rank the full pool for one claim: score descending, ties by id."""
    scored = [(-ranker.score(claim.text, eid, text), eid)
              for eid, text in pool.items()]
    scored.sort()
    return [eid for _, eid in scored]


def precision_at_k(ranked_ids: Sequence[str], gold_ids: set[str], k: int) -> float:
    if k < 1 or k > len(ranked_ids):
        raise ValidationError(f"precision_at_k: k={k} outside 1..{len(ranked_ids)}")
    hits = sum(1 for eid in ranked_ids[:k] if eid in gold_ids)
    return hits / k


def average_precision(ranked_ids: Sequence[str], gold_ids: Sequence[str]) -> float:
    """Mean of precision-at-k over the ranks holding gold items."""
    gold = set(gold_ids)
    if not gold:
        raise ValidationError("average_precision: empty gold set")
    missing = gold - set(ranked_ids)
    if missing:
        raise ValidationError(f"average_precision: gold ids missing from "
                              f"ranking: {sorted(missing)}")
    hits = 0
    total = 0.0
    for k, eid in enumerate(ranked_ids, start=1):
        if eid in gold:
            hits += 1
            total += hits / k
    return total / len(gold)


def reciprocal_rank(ranked_ids: Sequence[str], gold_ids: Sequence[str],
                    variant: str = "all_gold") -> float:
    """Per-claim reciprocal rank.

    all_gold: mean of 1/rank over every gold item (the convention used by
    the pipeline's reports). first_relevant: 1/rank of the best-ranked gold
    item (the common external convention, kept for comparison).
    """
    gold = set(gold_ids)
    if not gold:
        raise ValidationError("reciprocal_rank: empty gold set")
    ranks = [k for k, eid in enumerate(ranked_ids, start=1) if eid in gold]
    if len(ranks) != len(gold):
        missing = gold - set(ranked_ids)
        raise ValidationError(f"reciprocal_rank: gold ids missing from "
                              f"ranking: {sorted(missing)}")
    if variant == "all_gold":
        return sum(1.0 / r for r in ranks) / len(ranks)
    if variant == "first_relevant":
        return 1.0 / ranks[0]
    raise ValidationError(f"unknown reciprocal-rank variant {variant!r}")


@dataclass
class RetrievalReport:
    map: float
    mrr: float
    per_claim: dict[str, tuple[float, float]]  # claim_id -> (ap, rr)


def evaluate_retrieval(ranker: EvidenceRanker, claims: Sequence[Claim],
                       pool: dict[str, str],
                       mrr_variant: str = "all_gold") -> RetrievalReport:
    """MAP and MRR over all claims; per-claim values kept for inspection.

    Values are fractions in [0, 1]; emitted tables scale them by 100.
    """
    if not claims:
        raise ValidationError("evaluate_retrieval: no claims")
    per_claim: dict[str, tuple[float, float]] = {}
    for claim in claims:
        ranked = rank_evidence(ranker, claim, pool)
        ap = average_precision(ranked, claim.gold_evidence_ids)
        rr = reciprocal_rank(ranked, claim.gold_evidence_ids, mrr_variant)
        per_claim[claim.claim_id] = (ap, rr)
    n = len(per_claim)
    return RetrievalReport(
        map=sum(ap for ap, _ in per_claim.values()) / n,
        mrr=sum(rr for _, rr in per_claim.values()) / n,
        per_claim=per_claim,
    )
