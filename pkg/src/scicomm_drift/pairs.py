"""Candidate pair generation, auto-labeling, and stratified sampling.

A candidate pair joins one paper finding with one finding from a news story
or tweet that cites the paper's DOI. Pairs with extreme cosine similarity
are labeled automatically; the middle band goes to annotators, sampled
evenly from fixed-width similarity bins with a portable seeded generator.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import DocumentStore, LinkTable
from .errors import ValidationError
from .findings import Finding, finding_id
from .hashing import make_pair_id, substream
from .similarity import EmbeddingProvider, cosine_similarity, jaccard_index

AUTO_MATCHED = "auto_matched"
AUTO_UNMATCHED = "auto_unmatched"
NEEDS_ANNOTATION = "needs_annotation"

_PAIR_KEYS = ("pair_id", "paper_doi", "field", "source_kind",
              "finding_paper", "finding_mention", "cos_sim", "jaccard")


@dataclass
class CandidatePair:
    pair_id: str
    paper_doi: str
    field: str
    source_kind: str
    finding_paper: str
    finding_mention: str
    cos_sim: float
    jaccard: float
    model_score: float | None = None

    def bin_key(self, score_source: str) -> float:
        if score_source == "cosine":
            return self.cos_sim
        if score_source == "external_model":
            if self.model_score is None:
                raise ValidationError(
                    f"pair {self.pair_id}: no model score attached")
            return self.model_score
        raise ValidationError(f"unknown score_source {score_source!r}")


def pair_to_json(pair: CandidatePair) -> str:
    out = {k: getattr(pair, k) for k in _PAIR_KEYS}
    return json.dumps(out, ensure_ascii=False, separators=(",", ":"))


def pair_from_json(obj: dict) -> CandidatePair:
    missing = set(_PAIR_KEYS) - set(obj)
    if missing:
        raise ValidationError(f"pair record missing keys: {sorted(missing)}")
    return CandidatePair(**{k: obj[k] for k in _PAIR_KEYS})


def write_pairs(pairs: Iterable[CandidatePair], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(pair_to_json(pair))
            fh.write("\n")
            count += 1
    return count


def read_pairs(path: str | Path) -> list[CandidatePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                pairs.append(pair_from_json(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
    return pairs


def generate_pairs(store: DocumentStore, links: LinkTable,
                   findings: dict[str, list[Finding]],
                   provider: EmbeddingProvider,
                   threads: int = 1) -> Iterator[CandidatePair]:
    """Stream candidate pairs for every linked (paper, mention) pair.

    Output order is deterministic: links sorted by (paper_doi,
    mention_doc_id), then paper sentence index, then mention sentence index.
    Embeddings are cached per link group, so the memory high-water mark
    scales with the findings of one link, not the total pair count.
    """
    papers = store.papers_by_doi()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def embed_all(items: list[Finding]) -> list:
        if pool is not None:
            return list(pool.map(
                lambda f: provider.vector_for(finding_id(f.doc_id, f.sent_idx), f.text),
                items))
        return [provider.vector_for(finding_id(f.doc_id, f.sent_idx), f.text)
                for f in items]

    try:
        current_doi: str | None = None
        paper_findings: list[Finding] = []
        paper_vectors: list = []
        for entry in links.entries:
            if entry.paper_doi != current_doi:
                current_doi = entry.paper_doi
                paper = papers.get(entry.paper_doi)
                if paper is None:
                    raise ValidationError(
                        f"link references unknown paper DOI {entry.paper_doi!r}")
                paper_findings = findings.get(paper.doc_id, [])
                paper_vectors = embed_all(paper_findings)
            mention = store.get(entry.mention_doc_id)
            mention_findings = findings.get(entry.mention_doc_id, [])
            mention_vectors = embed_all(mention_findings)
            paper = papers[entry.paper_doi]
            for pf, pv in zip(paper_findings, paper_vectors):
                for mf, mv in zip(mention_findings, mention_vectors):
                    try:
                        cos = cosine_similarity(pv.values, mv.values)
                    except ValidationError as exc:
                        raise ValidationError(
                            f"pair ({finding_id(pf.doc_id, pf.sent_idx)}, "
                            f"{finding_id(mf.doc_id, mf.sent_idx)}): {exc}") from exc
                    yield CandidatePair(
                        pair_id=make_pair_id(pf.doc_id, pf.sent_idx, mf.doc_id, mf.sent_idx),
                        paper_doi=entry.paper_doi,
                        field=paper.field or "other",
                        source_kind=mention.source_kind,
                        finding_paper=pf.text,
                        finding_mention=mf.text,
                        cos_sim=cos,
                        jaccard=jaccard_index(pf.text, mf.text),
                    )
    finally:
        if pool is not None:
            pool.shutdown(wait=False)


@dataclass
class AutoThresholds:
    unmatched_below: float = 0.4
    matched_above: float = 0.9
    matched_jaccard: float = 0.5


def auto_label(pair: CandidatePair, thresholds: AutoThresholds | None = None) -> str:
    """Three-way split on similarity; the inequalities are strict, so both
    boundary values fall through to annotation."""
    t = thresholds or AutoThresholds()
    if pair.cos_sim < t.unmatched_below:
        return AUTO_UNMATCHED
    if pair.cos_sim > t.matched_above and pair.jaccard > t.matched_jaccard:
        return AUTO_MATCHED
    return NEEDS_ANNOTATION


@dataclass
class SampleSpec:
    lo: float = 0.4
    hi: float = 0.9
    bin_width: float = 0.05
    per_bin: int = 60
    seed: int = 0
    score_source: str = "cosine"

    def validate(self) -> None:
        if not (self.lo < self.hi):
            raise ValidationError("sample range must satisfy lo < hi")
        if self.bin_width <= 0:
            raise ValidationError("bin_width must be positive")
        if self.per_bin <= 0:
            raise ValidationError("per_bin must be positive")
        if self.score_source not in ("cosine", "external_model"):
            raise ValidationError(f"unknown score_source {self.score_source!r}")

    def edges(self) -> list[float]:
        """Bin edges; bins are [edge_k, edge_k+1), the last bin closed."""
        n_bins = max(1, math.ceil((self.hi - self.lo) / self.bin_width - 1e-9))
        edges = [self.lo + k * self.bin_width for k in range(n_bins)]
        edges.append(self.hi)
        return edges


@dataclass
class BinReport:
    bin_lo: float
    bin_hi: float
    available: int
    drawn: int
    shortfall: int


def _assign_bin(value: float, edges: list[float]) -> int | None:
    """Bin index for value, or None when outside [edges[0], edges[-1]]."""
    if value < edges[0] or value > edges[-1]:
        return None
    if value == edges[-1]:
        return len(edges) - 2
    return bisect_right(edges, value) - 1


def stratified_sample(pairs: Sequence[CandidatePair],
                      spec: SampleSpec) -> tuple[list[CandidatePair], list[BinReport]]:
    """Draw per_bin pairs uniformly without replacement from each bin.

    Pairs are keyed by spec.score_source. Within each bin the candidate list
    is put in canonical order (sorted by pair_id) and then a portable seeded
    generator (SplitMix64 substream per bin) draws a Fisher-Yates prefix, so
    the selection reproduces bit for bit from the same seed anywhere.
    Shortfalls never raise; the per-bin report records them.
    """
    spec.validate()
    edges = spec.edges()
    n_bins = len(edges) - 1
    bins: list[list[CandidatePair]] = [[] for _ in range(n_bins)]
    for pair in pairs:
        k = _assign_bin(pair.bin_key(spec.score_source), edges)
        if k is not None:
            bins[k].append(pair)
    sampled: list[CandidatePair] = []
    report: list[BinReport] = []
    for k, members in enumerate(bins):
        available = len(members)
        members.sort(key=lambda p: p.pair_id)
        rng = substream(spec.seed, k)
        drawn = rng.sample_prefix(members, spec.per_bin)
        sampled.extend(drawn)
        report.append(BinReport(
            bin_lo=edges[k], bin_hi=edges[k + 1],
            available=available,
            drawn=len(drawn),
            shortfall=max(0, spec.per_bin - len(drawn)),
        ))
    return sampled, report


def pilot_sample(pairs: Sequence[CandidatePair], per_bin: int = 20,
                 seed: int = 0, score_source: str = "cosine") -> tuple[list[CandidatePair], list[BinReport]]:
    """Pilot draw over the full [0, 1] score range (20 bins of width 0.05)."""
    spec = SampleSpec(lo=0.0, hi=1.0, bin_width=0.05, per_bin=per_bin,
                      seed=seed, score_source=score_source)
    return stratified_sample(pairs, spec)


def read_score_file(path: str | Path) -> dict[str, float]:
    """External model scores: JSON lines {"pair_id", "score"}, score in [0, 1].

    Lines starting with '#' are comments.
    """
    scores: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                pid, score = obj["pair_id"], float(obj["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            if not 0.0 <= score <= 1.0:
                raise ValidationError(
                    f"{path}:{line_no}: score {score} outside [0, 1]")
            if pid in scores:
                raise ValidationError(f"{path}:{line_no}: duplicate pair_id {pid!r}")
            scores[pid] = score
    return scores


def score_with_model(pairs: Sequence[CandidatePair],
                     scores: dict[str, float]) -> list[CandidatePair]:
    """Attach external model scores as the binning key.

    Every pair must be covered; a missing pair_id is an error naming it.
    """
    out: list[CandidatePair] = []
    for pair in pairs:
        if pair.pair_id not in scores:
            raise ValidationError(f"no model score for pair {pair.pair_id}")
        score = scores[pair.pair_id]
        out.append(CandidatePair(**{k: getattr(pair, k) for k in _PAIR_KEYS},
                                 model_score=score))
    return out
