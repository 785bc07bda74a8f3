#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Everything under tests/fixtures/ is produced here from fixed seeds, by
running the real pipeline stages in-process. Rerun after changing the
tokenizer, the featurizer, the sampler, or the templates below, and commit
the result. The script asserts the structural facts the tests pin (planted
finding counts, the 418-pair total) so drift is caught at generation time,
not at test time.
"""
from __future__ import annotations

import json
import random
import sys
from collections import Counter
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"

sys.path.insert(0, str(ROOT / "src"))

from scicomm_drift.annotations import (  # noqa: E402
    MaceConfig, fit_mace, filter_low_competence, flag_outliers,
)
from scicomm_drift.corpus import (  # noqa: E402
    Document, DocumentStore, UserMeta, export_documents, link_mentions,
)
from scicomm_drift.findings import (  # noqa: E402
    TrainConfig, extract_findings, split_sentences, train_classifier,
)
from scicomm_drift.pairs import (  # noqa: E402
    NEEDS_ANNOTATION, SampleSpec, auto_label, generate_pairs, stratified_sample,
)
from scicomm_drift.similarity import TfidfProvider, fit_tfidf  # noqa: E402

SEED = 20240816

# Per-paper planted finding counts; with the news/tweet link cycles below
# these force exactly 418 candidate pairs.
PAPER_FINDINGS = [4, 3, 5, 4, 5, 4, 5, 3, 4, 4, 3, 5]
NEWS_FINDINGS_CYCLE = [2, 1, 3]
N_NEWS = 30
N_TWEETS = 40

FIELD_CYCLE = ["medicine", "biology", "psychology", "computer_science", "other"]
OUTLET_CYCLE = ["general_news", "press_release", "sci_tech_news"]

TOPICS = [
    ("caffeine", "memory recall", "older adults", "randomized trials"),
    ("vitamin d", "bone density", "night shift workers", "cohort surveys"),
    ("gut bacteria", "insulin sensitivity", "hospital patients", "lab assays"),
    ("screen time", "attention span", "young children", "longitudinal panels"),
    ("exercise", "blood pressure", "office employees", "wearable sensors"),
    ("sleep duration", "reaction time", "college students", "driving simulators"),
    ("air pollution", "lung function", "rural residents", "imaging scans"),
    ("green tea", "cholesterol levels", "retired teachers", "blood panels"),
    ("social media", "anxiety symptoms", "teenagers", "diary studies"),
    ("meditation", "stress hormones", "elite athletes", "saliva sampling"),
    ("red meat", "heart disease risk", "twin pairs", "registry linkage"),
    ("urban noise", "sleep quality", "apartment dwellers", "acoustic monitors"),
]
EXTRA_TOPICS = [
    ("olive oil", "joint pain", "marathon runners", "questionnaires"),
    ("cold showers", "immune markers", "navy recruits", "blood draws"),
    ("board games", "working memory", "care home residents", "puzzle batteries"),
    ("houseplants", "air quality", "call center staff", "sensor grids"),
    ("fermented food", "mood swings", "new parents", "phone check-ins"),
    ("cycling", "knee strength", "delivery riders", "gait labs"),
    ("audiobooks", "vocabulary growth", "commuting adults", "recall quizzes"),
    ("sunlight", "focus levels", "remote workers", "desk trackers"),
    ("chess practice", "planning skills", "club players", "timed drills"),
    ("herbal tea", "digestion comfort", "shift nurses", "symptom logs"),
    ("journaling", "worry frequency", "first year students", "weekly surveys"),
    ("stretching", "back stiffness", "warehouse crews", "motion capture"),
]

DIRECTIONS = ["increased", "decreased", "improved", "reduced"]
ADVERBS = ["strongly", "modestly", "markedly", "slightly", "noticeably"]

OFF_TOPIC = [
    ("commuter traffic", "rose", "downtown lanes"),
    ("ticket prices", "dipped", "regional theaters"),
    ("rainfall totals", "climbed", "coastal towns"),
    ("parking demand", "fell", "stadium districts"),
    ("cafe seating", "expanded", "river promenades"),
    ("ferry delays", "eased", "harbor crossings"),
]


def paper_finding_text(topic, k: int) -> str:
    subject, obj, pop, _ = topic
    if k % 2 == 0:
        direction = DIRECTIONS[(k // 2) % len(DIRECTIONS)]
        adverb = ADVERBS[k % len(ADVERBS)]
        return (f"We found that {subject} {adverb} {direction} {obj} "
                f"by {10 + 3 * k} percent in {pop}.")
    adverb = ADVERBS[(k + 2) % len(ADVERBS)]
    return (f"We conclude that {subject} has a {adverb} lasting influence "
            f"on {obj} among {pop}.")


def paper_text(topic, n_findings: int) -> str:
    subject, obj, pop, method = topic
    sentences = [
        f"Previous studies reported mixed evidence about {subject} and {obj}.",
        f"Prior work has linked {subject} with {obj} in small samples.",
        f"This study aimed to determine whether {subject} affects {obj}.",
        f"We measured {obj} in 240 {pop} using {method}.",
        f"Data were collected with {method} and analyzed with mixed models.",
    ]
    sentences += [paper_finding_text(topic, k) for k in range(n_findings)]
    return " ".join(sentences)


def mention_finding_text(topic, k: int, level: str, rng: random.Random) -> str:
    """A retelling of paper finding k at a chosen fidelity level."""
    subject, obj, pop, _ = topic
    if level == "copy":
        return paper_finding_text(topic, k)
    if level == "close":
        direction = DIRECTIONS[(k // 2) % len(DIRECTIONS)] if k % 2 == 0 else "changed"
        return f"Scientists found that {subject} {direction} {obj} in {pop}."
    if level == "loose":
        verb = rng.choice(["shift", "alter", "affect"])
        return f"Researchers found {subject} may {verb} {obj}."
    noun, verb, place = OFF_TOPIC[rng.randrange(len(OFF_TOPIC))]
    return f"Researchers found that {noun} {verb} modestly near {place}."


def news_text(topic, finding_sentences: list[str]) -> str:
    subject, obj, _, method = topic
    head = f"Previous studies reported growing interest in {subject} and {obj}."
    tail = f"The team measured outcomes using {method} over two years."
    return " ".join([head] + finding_sentences + [tail])


def build_corpus(rng: random.Random):
    papers: list[Document] = []
    for i, topic in enumerate(TOPICS):
        papers.append(Document(
            doc_id=f"paper{i + 1:02d}",
            source_kind="paper",
            text=paper_text(topic, PAPER_FINDINGS[i]),
            doi=f"10.5555/demo.{i + 1:04d}",
            field=FIELD_CYCLE[i % len(FIELD_CYCLE)],
            published_at=f"2023-{(i % 12) + 1:02d}-11",
        ))

    news: list[Document] = []
    for j in range(N_NEWS):
        paper_idx = j % len(TOPICS)
        topic = TOPICS[paper_idx]
        n_findings = NEWS_FINDINGS_CYCLE[j % len(NEWS_FINDINGS_CYCLE)]
        sentences = []
        for k in range(n_findings):
            target = k % PAPER_FINDINGS[paper_idx]
            level = rng.choices(["copy", "close", "loose", "off"],
                                weights=[20, 35, 30, 15])[0]
            sentences.append(mention_finding_text(topic, target, level, rng))
        doi = f"10.5555/demo.{paper_idx + 1:04d}"
        if j % 4 == 0:
            doi = "https://doi.org/" + doi
        news.append(Document(
            doc_id=f"news{j + 1:02d}",
            source_kind="news",
            text=news_text(topic, sentences),
            linked_doi=doi,
            outlet_type=OUTLET_CYCLE[j % len(OUTLET_CYCLE)],
            published_at=f"2023-{(j % 12) + 1:02d}-2{j % 8}",
        ))

    tweets: list[Document] = []
    for t in range(N_TWEETS):
        paper_idx = t % len(TOPICS)
        topic = TOPICS[paper_idx]
        is_org = t % 5 in (0, 3)
        is_verified = t % 3 == 0
        # Organizational accounts retell more faithfully: tilt fidelity up.
        weights = [40, 35, 20, 5] if is_org else [10, 25, 40, 25]
        level = rng.choices(["copy", "close", "loose", "off"], weights=weights)[0]
        target = t % PAPER_FINDINGS[paper_idx]
        meta = UserMeta(
            is_verified=is_verified,
            is_organization=is_org,
            followers=rng.randrange(2000, 300000) if is_org else rng.randrange(20, 5000),
            following=rng.randrange(10, 2000),
            account_age_years=round(rng.uniform(0.3, 14.0), 1),
        )
        tweets.append(Document(
            doc_id=f"tweet{t + 1:02d}",
            source_kind="tweet",
            text=mention_finding_text(topic, target, level, rng),
            linked_doi=f"10.5555/demo.{paper_idx + 1:04d}",
            user_meta=meta,
            published_at=f"2024-0{(t % 9) + 1}-0{(t % 9) + 1}" if t % 2 == 0 else None,
        ))
    return papers, news, tweets


def planted_finding_counts(papers, news, tweets) -> dict[str, int]:
    counts = {p.doc_id: PAPER_FINDINGS[i] for i, p in enumerate(papers)}
    for j, doc in enumerate(news):
        counts[doc.doc_id] = NEWS_FINDINGS_CYCLE[j % len(NEWS_FINDINGS_CYCLE)]
    for doc in tweets:
        counts[doc.doc_id] = 1
    return counts


def labeled_sentence(cls: str, topic, rng: random.Random) -> str:
    subject, obj, pop, method = topic
    n = rng.randrange(4, 60)
    if cls == "BACKGROUND":
        return rng.choice([
            f"Previous studies reported that {subject} relates to {obj} in {pop}.",
            f"Prior work has linked {subject} with {obj}.",
            f"It is well known that {subject} varies widely among {pop}.",
            f"Previous studies reported growing interest in {subject} and {obj}.",
            f"Since {1980 + n % 40}, previous studies reported rising interest in {subject}.",
            f"Earlier surveys of {n * 10} {pop} described {obj} as poorly understood.",
        ])
    if cls == "OBJECTIVE":
        return rng.choice([
            f"This study aimed to determine whether {subject} affects {obj}.",
            f"We sought to quantify the impact of {subject} on {obj}.",
            f"The objective of this study was to examine {subject} in {pop}.",
            f"This study aimed to follow {n * 5} {pop} and examine {subject}.",
        ])
    if cls == "METHODS":
        return rng.choice([
            f"We measured {obj} in {n * 10} {pop} using {method}.",
            f"Participants were assigned to {subject} groups and followed for {n} weeks.",
            f"Data were collected with {method} and analyzed with mixed models.",
            f"The team measured outcomes using {method} over two years.",
        ])
    if cls == "RESULTS":
        direction = rng.choice(DIRECTIONS)
        adverb = rng.choice(ADVERBS)
        return rng.choice([
            f"We found that {subject} {adverb} {direction} {obj} by {n} percent in {pop}.",
            f"Scientists found that {subject} {direction} {obj} in {pop}.",
            f"Researchers found {subject} may {rng.choice(['shift', 'alter', 'affect'])} {obj}.",
            f"Researchers found that {subject} {direction} modestly near {pop}.",
            f"We observed a {adverb} marked change in {obj} after {subject} exposure.",
        ])
    if cls == "CONCLUSIONS":
        adverb = rng.choice(ADVERBS)
        return rng.choice([
            f"We conclude that {subject} has a {adverb} lasting influence on {obj} among {pop}.",
            f"These findings suggest that {subject} could alter {obj} in {pop}.",
            f"Overall, the study concludes that {subject} matters for {obj}.",
            f"These findings suggest that {subject} could alter {obj} within {n} months.",
        ])
    raise ValueError(cls)


def build_training_corpus(rng: random.Random, per_class: int) -> list[dict]:
    pool = TOPICS + EXTRA_TOPICS
    rows = []
    for cls in ("BACKGROUND", "OBJECTIVE", "METHODS", "RESULTS", "CONCLUSIONS"):
        seen = set()
        attempts = 0
        while len(seen) < per_class:
            attempts += 1
            if attempts > per_class * 200:
                raise RuntimeError(
                    f"template pool too small for {cls}: {len(seen)} < {per_class}"
                )
            topic = pool[rng.randrange(len(pool))]
            text = labeled_sentence(cls, topic, rng)
            if text in seen:
                continue
            seen.add(text)
            rows.append({"text": text, "label": cls})
    rng.shuffle(rows)
    return rows


CONFIG_YAML = """\
# Pipeline configuration for the bundled mini-corpus.
sampling:
  seed: 7
mace:
  seed: 11
split:
  seed: 3
regression:
  # Twelve papers with a handful of matched pairs each; the production
  # default of 31 would pool everything into one group.
  min_group_size: 5
"""

ALPHA_WORKED_EXAMPLE = [
    ("wk01", "u1", 1), ("wk01", "u2", 1), ("wk01", "u3", 2),
    ("wk02", "u1", 2), ("wk02", "u2", 3),
    ("wk03", "u1", 3), ("wk03", "u2", 3), ("wk03", "u3", 3),
    ("wk04", "u1", 3), ("wk04", "u2", 4), ("wk04", "u3", 5),
    ("wk05", "u1", 2), ("wk05", "u3", 2),
    ("wk06", "u2", 1), ("wk06", "u3", 1),
    ("wk07", "u1", 4), ("wk07", "u2", 4), ("wk07", "u3", 4),
    ("wk08", "u1", 1), ("wk08", "u2", 5),
    ("wk09", "u2", 5), ("wk09", "u3", 5),
    ("wk10", "u1", 2), ("wk10", "u2", 2), ("wk10", "u3", 3),
]


def synth_annotations(sampled_pairs, rng: random.Random):
    """Ratings from a planted annotator pool over the sampled pairs."""
    competences = {
        "ann01": 0.95, "ann02": 0.92, "ann03": 0.88, "ann04": 0.85,
        "ann05": 0.82, "ann06": 0.78, "ann07": 0.74, "ann08": 0.70,
        "ann09": 0.64, "ann10": 0.58, "ann11": 0.32, "ann12": 0.25,
    }
    ids = sorted(competences)
    rows = []
    for idx, pair in enumerate(sampled_pairs):
        true = max(1, min(5, round(1.0 + 4.0 * max(0.0, pair.cos_sim))))
        raters = [ids[(idx * 5 + r) % len(ids)] for r in range(5)]
        for rater in raters:
            if rng.random() < competences[rater]:
                rating = true
            else:
                rating = rng.randrange(1, 6)
            rows.append({"pair_id": pair.pair_id, "annotator_id": rater,
                         "rating": rating})
    return rows


def build_retrieval_fixtures(papers):
    pool = {}
    gold_by_paper: dict[int, list[str]] = {}
    for i, topic in enumerate(TOPICS):
        ids = []
        for k in range(2):
            ev_id = f"ev-{i + 1:02d}-{k}"
            pool[ev_id] = paper_finding_text(topic, k)
            ids.append(ev_id)
        gold_by_paper[i] = ids
    for d, (noun, verb, place) in enumerate(OFF_TOPIC):
        pool[f"ev-x{d}"] = f"Researchers found that {noun} {verb} modestly near {place}."
    claims = []
    for i in range(8):
        subject, obj, pop, _ = TOPICS[i]
        claims.append({
            "claim_id": f"claim{i + 1:02d}",
            "text": f"{subject} changes {obj} in {pop} according to a new study",
            "gold_evidence_ids": gold_by_paper[i],
        })
    return claims, pool


def write_jsonl(rows, path: Path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def main() -> None:
    rng = random.Random(SEED)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    corpus_dir = FIXTURES / "mini_corpus"
    corpus_dir.mkdir(exist_ok=True)

    papers, news, tweets = build_corpus(rng)
    export_documents(papers, corpus_dir / "papers.jsonl")
    export_documents(news, corpus_dir / "news.jsonl")
    export_documents(tweets, corpus_dir / "tweets.jsonl")

    train_rows = build_training_corpus(random.Random(SEED + 1), per_class=500)
    eval_rows = build_training_corpus(random.Random(SEED + 2), per_class=60)
    write_jsonl(train_rows, FIXTURES / "train_sentences.jsonl")
    write_jsonl(eval_rows, FIXTURES / "eval_sentences.jsonl")

    (FIXTURES / "config.yaml").write_text(CONFIG_YAML, encoding="utf-8")

    write_jsonl(
        [{"pair_id": p, "annotator_id": a, "rating": r}
         for p, a, r in ALPHA_WORKED_EXAMPLE],
        FIXTURES / "alpha_worked_example.jsonl")

    claims, pool = build_retrieval_fixtures(papers)
    write_jsonl(claims, FIXTURES / "claims.jsonl")
    write_jsonl([{"evidence_id": k, "text": v} for k, v in sorted(pool.items())],
                FIXTURES / "evidence_pool.jsonl")

    # Run the pipeline to check the planted structure and derive the
    # annotation fixture from the same sample the smoke run will draw.
    store = DocumentStore()
    for doc in papers + news + tweets:
        store.add(doc)

    model = train_classifier(
        [(r["text"], r["label"]) for r in train_rows], TrainConfig())
    findings = {}
    planted = planted_finding_counts(papers, news, tweets)
    mismatches = []
    for doc in sorted(store.all_documents(), key=lambda d: d.doc_id):
        rows = extract_findings(model, doc)
        findings[doc.doc_id] = rows
        if len(rows) != planted[doc.doc_id]:
            labels = [(s.sent_idx, r) for s, r in zip(
                split_sentences(doc),
                (f.label for f in rows))]
            mismatches.append((doc.doc_id, planted[doc.doc_id], len(rows), labels))
    if mismatches:
        for doc_id, want, got, labels in mismatches[:10]:
            print(f"MISMATCH {doc_id}: planted {want}, extracted {got} {labels}")
        raise SystemExit("template drift: adjust templates or training corpus")

    links = link_mentions(store)
    assert not links.unresolved, links.unresolved
    assert len(links.entries) == N_NEWS + N_TWEETS

    texts = [f.text for doc_id in sorted(findings) for f in findings[doc_id]]
    provider = TfidfProvider(fit_tfidf(texts, hash_dim=4096))
    pairs = list(generate_pairs(store, links, findings, provider))
    assert len(pairs) == 418, f"expected 418 candidate pairs, got {len(pairs)}"

    label_counts = Counter(auto_label(p) for p in pairs)
    eligible = [p for p in pairs if auto_label(p) == NEEDS_ANNOTATION]
    spec = SampleSpec(seed=7)
    sampled, bins = stratified_sample(eligible, spec)
    print(f"auto labels: {dict(label_counts)}; sampled {len(sampled)} "
          f"of {len(eligible)} eligible")
    assert len(sampled) >= 40, "too few sampled pairs for a useful fixture"

    ann_rows = synth_annotations(sampled, random.Random(SEED + 3))
    write_jsonl(ann_rows, FIXTURES / "annotations.jsonl",
                header="crowd ratings for the mini-corpus annotation sample")

    # Derive expert overrides the aggregate stage can apply: replicate its
    # competence filtering, then correct two flagged pairs.
    from scicomm_drift.annotations import AnnotationRecord
    records = [AnnotationRecord(r["pair_id"], r["annotator_id"], r["rating"])
               for r in ann_rows]
    result = fit_mace(records, MaceConfig(seed=11))
    kept, _ = filter_low_competence(records, result.profiles, 0.1)
    flagged = sorted(flag_outliers(kept, 1.2))
    overrides = []
    for pid in flagged[:2]:
        rec = next(r for r in kept if r.pair_id == pid)
        pair = next(p for p in sampled if p.pair_id == pid)
        true = max(1, min(5, round(1.0 + 4.0 * max(0.0, pair.cos_sim))))
        overrides.append({"pair_id": pid, "annotator_id": rec.annotator_id,
                          "rating": true})
    write_jsonl(overrides, FIXTURES / "expert_overrides.jsonl",
                header="expert corrections for flagged pairs")
    print(f"annotations: {len(ann_rows)} ratings on {len(sampled)} pairs; "
          f"{len(flagged)} flagged; {len(overrides)} overrides")

    matched = sum(1 for p in pairs if 1.0 + 4.0 * max(0.0, p.cos_sim) > 3.0)
    tweet_matched = sum(1 for p in pairs
                        if p.source_kind == "tweet"
                        and 1.0 + 4.0 * max(0.0, p.cos_sim) > 3.0)
    print(f"cosine-matched pairs at the 3.0 bar: {matched} "
          f"(tweets: {tweet_matched})")
    assert tweet_matched >= 20, "account-effects fit needs more matched tweets"
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
