"""Crowd rating aggregation: competence EM, filtering, and agreement.

Annotators rate sampled pairs on the 1..5 information-matching scale. A
latent-competence EM model (each rating either copies the item's true label
or is drawn from the annotator's private spamming distribution) estimates
who to trust; low-competence raters are dropped, high-variance items
flagged, expert corrections applied, and the surviving ratings averaged.
Krippendorff's alpha quantifies agreement before and after.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .hashing import SplitMix64, stable_hash64, substream

logger = logging.getLogger(__name__)

N_LABELS = 5
RATING_VALUES = (1, 2, 3, 4, 5)
SPLIT_NAMES = ("train", "dev", "test")

PROVENANCE_ANNOTATED = "annotated"
PROVENANCE_AUTO = "auto"
PROVENANCE_EXPERT = "expert_override"


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    annotator_id: str
    rating: int

    def validate(self) -> None:
        if not self.pair_id or not self.annotator_id:
            raise ValidationError("annotation needs pair_id and annotator_id")
        if isinstance(self.rating, bool) or self.rating not in RATING_VALUES:
            raise ValidationError(
                f"pair {self.pair_id}, annotator {self.annotator_id}: "
                f"rating {self.rating!r} not in 1..5")


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """JSON lines {"pair_id", "annotator_id", "rating"}; duplicates of one
    (pair, annotator) cell are malformed."""
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                rec = AnnotationRecord(obj["pair_id"], obj["annotator_id"], obj["rating"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
            rec.validate()
            cell = (rec.pair_id, rec.annotator_id)
            if cell in seen:
                raise ValidationError(
                    f"{path}:{line_no}: duplicate rating for {cell}")
            seen.add(cell)
            records.append(rec)
    return records


def write_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"pair_id": rec.pair_id,
                                 "annotator_id": rec.annotator_id,
                                 "rating": rec.rating},
                                ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


@dataclass
class MaceConfig:
    max_iter: int = 200
    tol: float = 1e-6
    n_restarts: int = 5
    smoothing_alpha: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.n_restarts < 1:
            raise ValidationError("n_restarts must be >= 1")
        if self.smoothing_alpha < 0:
            raise ValidationError("smoothing_alpha must be >= 0")


@dataclass
class AnnotatorProfile:
    annotator_id: str
    competence: float
    spam_dist: np.ndarray  # (N_LABELS,), sums to 1


@dataclass
class MaceResult:
    profiles: dict[str, AnnotatorProfile]
    posterior: dict[str, np.ndarray]   # pair_id -> (N_LABELS,) true-label posterior
    loglik: list[float]                # raw data log-likelihood per iteration
    penalized: list[float]             # EM objective (log-lik + log prior) per iteration
    converged: bool
    best_restart: int


def _index_records(records: Sequence[AnnotationRecord]):
    items: list[str] = []
    item_of: dict[str, int] = {}
    anns: list[str] = []
    ann_of: dict[str, int] = {}
    seen: set[tuple[str, str]] = set()
    item_idx = np.empty(len(records), dtype=np.int64)
    ann_idx = np.empty(len(records), dtype=np.int64)
    labels = np.empty(len(records), dtype=np.int64)
    for r, rec in enumerate(records):
        rec.validate()
        cell = (rec.pair_id, rec.annotator_id)
        if cell in seen:
            raise ValidationError(f"duplicate rating for {cell}")
        seen.add(cell)
        if rec.pair_id not in item_of:
            item_of[rec.pair_id] = len(items)
            items.append(rec.pair_id)
        if rec.annotator_id not in ann_of:
            ann_of[rec.annotator_id] = len(anns)
            anns.append(rec.annotator_id)
        item_idx[r] = item_of[rec.pair_id]
        ann_idx[r] = ann_of[rec.annotator_id]
        labels[r] = rec.rating - 1
    return items, anns, item_idx, ann_idx, labels


def _em_once(item_idx: np.ndarray, ann_idx: np.ndarray, labels: np.ndarray,
             n_items: int, n_anns: int, config: MaceConfig,
             rng: SplitMix64) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                       list[float], list[float], bool]:
    alpha = config.smoothing_alpha
    theta = np.array([0.5 + 0.45 * (rng.next_u64() / 2.0**64) for _ in range(n_anns)])
    xi = np.array([[1.0 + 0.1 * (rng.next_u64() / 2.0**64) for _ in range(N_LABELS)]
                   for _ in range(n_anns)])
    xi /= xi.sum(axis=1, keepdims=True)

    def log_prior(th: np.ndarray, sp: np.ndarray) -> float:
        if alpha == 0.0:
            return 0.0
        return float(alpha * (np.log(th).sum() + np.log1p(-th).sum())
                     + alpha * np.log(sp).sum())

    raw_series: list[float] = []
    pen_series: list[float] = []
    converged = False
    n_ratings = np.bincount(ann_idx, minlength=n_anns).astype(np.float64)
    for _ in range(config.max_iter):
        # E step. Per rating r and candidate true label t:
        #   P(y_r | t) = theta_j [t == y_r] + (1 - theta_j) xi_j(y_r)
        spam_part = (1.0 - theta[ann_idx]) * xi[ann_idx, labels]      # (R,)
        like = np.repeat(spam_part[:, None], N_LABELS, axis=1)        # (R, K)
        like[np.arange(len(labels)), labels] += theta[ann_idx]
        log_unnorm = np.full((n_items, N_LABELS), -math.log(N_LABELS))
        np.add.at(log_unnorm, item_idx, np.log(like))
        row_max = log_unnorm.max(axis=1, keepdims=True)
        expd = np.exp(log_unnorm - row_max)
        norm = expd.sum(axis=1, keepdims=True)
        post = expd / norm
        raw_ll = float((np.log(norm).squeeze(1) + row_max.squeeze(1)).sum())
        raw_series.append(raw_ll)
        pen_series.append(raw_ll + log_prior(theta, xi))

        # Copy responsibility exists only where t equals the observed label.
        copy_share = theta[ann_idx] / like[np.arange(len(labels)), labels]
        copy_resp = post[item_idx, labels] * copy_share               # (R,)
        copies = np.bincount(ann_idx, weights=copy_resp, minlength=n_anns)
        spam_counts = np.zeros((n_anns, N_LABELS))
        np.add.at(spam_counts, (ann_idx, labels), 1.0 - copy_resp)

        # M step (MAP with additive smoothing).
        theta = (copies + alpha) / (n_ratings + 2.0 * alpha)
        theta = np.clip(theta, 1e-9, 1.0 - 1e-9)
        xi = (spam_counts + alpha) / (spam_counts.sum(axis=1, keepdims=True)
                                      + N_LABELS * alpha)
        xi = np.clip(xi, 1e-12, None)
        xi /= xi.sum(axis=1, keepdims=True)

        if len(pen_series) >= 2:
            prev, cur = pen_series[-2], pen_series[-1]
            if abs(cur - prev) / (abs(prev) + 1.0) < config.tol:
                converged = True
                break
    return theta, xi, post, raw_series, pen_series, converged


def fit_mace(records: Sequence[AnnotationRecord],
             config: MaceConfig | None = None,
             threads: int = 1) -> MaceResult:
    """Fit the latent-competence model by EM with random restarts.

    Each restart seeds its own SplitMix64 substream, so the whole fit is
    deterministic given ``config.seed`` (and independent of thread count).
    The best restart by final penalized objective wins; ties go to the
    lowest restart index. The penalized series (likelihood plus smoothing
    log-prior) is the quantity EM guarantees non-decreasing.
    """
    config = config or MaceConfig()
    config.validate()
    records = list(records)
    if not records:
        raise ValidationError("fit_mace: no annotation records")
    items, anns, item_idx, ann_idx, labels = _index_records(records)

    def run(restart: int):
        rng = substream(config.seed, restart)
        return _em_once(item_idx, ann_idx, labels, len(items), len(anns), config, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(config.n_restarts)))
    else:
        results = [run(r) for r in range(config.n_restarts)]

    best = max(range(config.n_restarts),
               key=lambda r: (results[r][4][-1], -r))
    theta, xi, post, raw_series, pen_series, converged = results[best]
    profiles = {a: AnnotatorProfile(annotator_id=a, competence=float(theta[j]),
                                    spam_dist=xi[j].copy())
                for j, a in enumerate(anns)}
    posterior = {p: post[i].copy() for i, p in enumerate(items)}
    return MaceResult(profiles=profiles, posterior=posterior,
                      loglik=raw_series, penalized=pen_series,
                      converged=converged, best_restart=best)


@dataclass
class FilterReport:
    dropped_annotators: list[str]
    orphaned_pair_ids: list[str]


def filter_low_competence(records: Sequence[AnnotationRecord],
                          profiles: dict[str, AnnotatorProfile],
                          drop_fraction: float) -> tuple[list[AnnotationRecord], FilterReport]:
    """Drop the ceil(drop_fraction * A) least competent annotators.

    Ties break on (competence, annotator_id) so the cut is deterministic.
    Items that lose every rating are reported, not silently kept.
    """
    if not 0.0 <= drop_fraction < 1.0:
        raise ValidationError(f"drop_fraction {drop_fraction} outside [0, 1)")
    ranked = sorted(profiles.values(), key=lambda p: (p.competence, p.annotator_id))
    n_drop = math.ceil(drop_fraction * len(ranked))
    dropped = {p.annotator_id for p in ranked[:n_drop]}
    kept = [r for r in records if r.annotator_id not in dropped]
    before = {r.pair_id for r in records}
    after = {r.pair_id for r in kept}
    report = FilterReport(dropped_annotators=sorted(dropped),
                          orphaned_pair_ids=sorted(before - after))
    return kept, report


def rating_std(ratings: Sequence[int | float]) -> float:
    """Sample standard deviation (n-1 denominator); 0.0 below two ratings."""
    n = len(ratings)
    if n < 2:
        return 0.0
    mean = sum(ratings) / n
    return math.sqrt(sum((r - mean) ** 2 for r in ratings) / (n - 1))


def flag_outliers(records: Sequence[AnnotationRecord],
                  std_threshold: float = 1.2) -> set[str]:
    """Pair ids whose rating sample-std exceeds the threshold."""
    by_pair: dict[str, list[int]] = {}
    for rec in records:
        by_pair.setdefault(rec.pair_id, []).append(rec.rating)
    return {pid for pid, ratings in by_pair.items()
            if rating_std(ratings) > std_threshold}


@dataclass(frozen=True)
class ExpertOverride:
    pair_id: str
    annotator_id: str
    rating: int


def read_overrides(path: str | Path) -> list[ExpertOverride]:
    out: list[ExpertOverride] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                out.append(ExpertOverride(obj["pair_id"], obj["annotator_id"],
                                          obj["rating"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
    return out


def apply_expert_overrides(records: Sequence[AnnotationRecord],
                           overrides: Sequence[ExpertOverride],
                           flagged: set[str] | None = None
                           ) -> tuple[list[AnnotationRecord], set[str]]:
    """Replace individual (pair, annotator) ratings with expert ones.

    Overriding a rating that does not exist is an error. Overriding a pair
    that was never flagged is allowed but logged as a warning. Returns the
    new records plus the set of overridden pair ids.
    """
    index = {(r.pair_id, r.annotator_id): i for i, r in enumerate(records)}
    out = list(records)
    touched: set[str] = set()
    for ov in overrides:
        cell = (ov.pair_id, ov.annotator_id)
        if cell not in index:
            raise ValidationError(f"override targets unknown rating {cell}")
        replacement = AnnotationRecord(ov.pair_id, ov.annotator_id, ov.rating)
        replacement.validate()
        if flagged is not None and ov.pair_id not in flagged:
            logger.warning("override on unflagged pair %s", ov.pair_id)
        out[index[cell]] = replacement
        touched.add(ov.pair_id)
    return out, touched


@dataclass
class AggregatedPair:
    pair_id: str
    ims: float
    n_ratings: int
    rating_std: float
    flagged_outlier: bool
    provenance: str
    split: str | None = None


def aggregated_to_json(pair: AggregatedPair) -> str:
    out = {"pair_id": pair.pair_id, "ims": pair.ims, "n_ratings": pair.n_ratings,
           "rating_std": pair.rating_std, "flagged_outlier": pair.flagged_outlier,
           "provenance": pair.provenance}
    if pair.split is not None:
        out["split"] = pair.split
    return json.dumps(out, ensure_ascii=False, separators=(",", ":"))


def read_aggregated(path: str | Path) -> list[AggregatedPair]:
    out: list[AggregatedPair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                out.append(AggregatedPair(
                    pair_id=obj["pair_id"], ims=float(obj["ims"]),
                    n_ratings=int(obj["n_ratings"]),
                    rating_std=float(obj["rating_std"]),
                    flagged_outlier=bool(obj["flagged_outlier"]),
                    provenance=obj["provenance"], split=obj.get("split")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
    return out


def write_aggregated(pairs: Iterable[AggregatedPair], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(aggregated_to_json(pair))
            fh.write("\n")
            count += 1
    return count


def aggregate_ims(records: Sequence[AnnotationRecord],
                  auto_labels: dict[str, str] | None = None,
                  override_pairs: set[str] | None = None,
                  flagged: set[str] | None = None) -> list[AggregatedPair]:
    """Average surviving ratings per pair and append auto-labeled pairs.

    Annotated pairs: ims is the plain mean of ratings (so always inside
    [1, 5]); provenance marks expert-corrected pairs. Auto pairs score 5.0
    (matched) or 1.0 (unmatched) with zero ratings.
    """
    override_pairs = override_pairs or set()
    flagged = flagged or set()
    by_pair: dict[str, list[int]] = {}
    for rec in records:
        rec.validate()
        by_pair.setdefault(rec.pair_id, []).append(rec.rating)
    out: list[AggregatedPair] = []
    for pid in sorted(by_pair):
        ratings = by_pair[pid]
        out.append(AggregatedPair(
            pair_id=pid,
            ims=sum(ratings) / len(ratings),
            n_ratings=len(ratings),
            rating_std=rating_std(ratings),
            flagged_outlier=pid in flagged,
            provenance=PROVENANCE_EXPERT if pid in override_pairs else PROVENANCE_ANNOTATED,
        ))
    for pid in sorted(auto_labels or {}):
        label = auto_labels[pid]
        if pid in by_pair:
            raise ValidationError(f"pair {pid} is both annotated and auto-labeled")
        if label == "auto_matched":
            score = 5.0
        elif label == "auto_unmatched":
            score = 1.0
        else:
            raise ValidationError(f"pair {pid}: auto label {label!r} cannot aggregate")
        out.append(AggregatedPair(pair_id=pid, ims=score, n_ratings=0,
                                  rating_std=0.0, flagged_outlier=False,
                                  provenance=PROVENANCE_AUTO))
    out.sort(key=lambda p: p.pair_id)
    return out


def krippendorff_alpha(records: Sequence[AnnotationRecord],
                       metric: str = "interval",
                       de_estimator: str = "population") -> float:
    """Agreement alpha from the coincidence matrix over multiply-rated items.

    metric picks the squared difference function: nominal (0/1), interval
    ((v - k)^2), or ordinal (cumulative-margin differences). de_estimator
    picks the expected-disagreement denominator: "population" pairs values
    with replacement (n^2), "sample" uses exact pairing without replacement
    (n (n - 1)); the two agree as n grows.
    """
    if metric not in ("nominal", "interval", "ordinal"):
        raise ValidationError(f"unknown metric {metric!r}")
    if de_estimator not in ("population", "sample"):
        raise ValidationError(f"unknown de_estimator {de_estimator!r}")
    by_item: dict[str, list[int]] = {}
    for rec in records:
        rec.validate()
        by_item.setdefault(rec.pair_id, []).append(rec.rating)
    units = [vals for vals in by_item.values() if len(vals) >= 2]
    if not units:
        raise ValidationError("krippendorff_alpha: no item has two or more ratings")

    values = sorted({v for unit in units for v in unit})
    vidx = {v: i for i, v in enumerate(values)}
    V = len(values)
    coincidence = np.zeros((V, V))
    for unit in units:
        m_u = len(unit)
        counts = np.zeros(V)
        for v in unit:
            counts[vidx[v]] += 1
        coincidence += (np.outer(counts, counts) - np.diag(counts)) / (m_u - 1)
    margins = coincidence.sum(axis=1)
    n = margins.sum()

    if metric == "nominal":
        d2 = 1.0 - np.eye(V)
    elif metric == "interval":
        arr = np.asarray(values, dtype=np.float64)
        d2 = (arr[:, None] - arr[None, :]) ** 2
    else:
        cum = np.cumsum(margins)
        d2 = np.zeros((V, V))
        for i in range(V):
            for j in range(V):
                lo, hi = min(i, j), max(i, j)
                between = cum[hi] - (cum[lo - 1] if lo > 0 else 0.0)
                d2[i, j] = (between - (margins[i] + margins[j]) / 2.0) ** 2

    d_obs = float((coincidence * d2).sum()) / n
    if d_obs == 0.0:
        return 1.0
    if de_estimator == "population":
        d_exp = float(margins @ d2 @ margins) / (n * n)
    else:
        d_exp = float(margins @ d2 @ margins) / (n * (n - 1.0))
    if d_exp == 0.0:
        raise ValidationError("krippendorff_alpha: zero expected disagreement")
    return 1.0 - d_obs / d_exp


def make_splits(aggregated: Sequence[AggregatedPair],
                pair_meta: dict[str, tuple[str, str]],
                ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                seed: int = 0) -> dict[str, str]:
    """Assign every pair to train/dev/test, disjoint by paper DOI.

    Within each field, DOIs (with their pair counts) are shuffled by a
    seeded substream, stably re-sorted by descending count, and greedily
    given to the split with the largest remaining deficit against its
    target share. All pairs of one DOI land in one split by construction.
    """
    if len(ratios) != 3:
        raise ValidationError("ratios must have three entries (train, dev, test)")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be non-negative and sum to 1, got {ratios}")
    doi_field: dict[str, str] = {}
    doi_pairs: dict[str, list[str]] = {}
    for pair in aggregated:
        if pair.pair_id not in pair_meta:
            raise ValidationError(f"no (doi, field) metadata for pair {pair.pair_id}")
        doi, field = pair_meta[pair.pair_id]
        if doi_field.setdefault(doi, field) != field:
            raise ValidationError(f"DOI {doi!r} appears under two fields")
        doi_pairs.setdefault(doi, []).append(pair.pair_id)

    assignment: dict[str, str] = {}
    for field in sorted({f for f in doi_field.values()}):
        dois = sorted(d for d, f in doi_field.items() if f == field)
        rng = substream(seed, stable_hash64(field))
        rng.shuffle(dois)
        dois.sort(key=lambda d: -len(doi_pairs[d]))  # stable: keeps shuffled tie order
        total = sum(len(doi_pairs[d]) for d in dois)
        targets = [r * total for r in ratios]
        assigned = [0.0, 0.0, 0.0]
        for doi in dois:
            deficits = [targets[s] - assigned[s] for s in range(3)]
            split = max(range(3), key=lambda s: (deficits[s], -s))
            assigned[split] += len(doi_pairs[doi])
            for pid in doi_pairs[doi]:
                assignment[pid] = SPLIT_NAMES[split]
    return assignment
