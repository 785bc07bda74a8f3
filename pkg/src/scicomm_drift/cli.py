"""Command-line pipeline driver.

Each subcommand fronts one pipeline stage, reads and writes only the
documented interchange files, and drops a run manifest next to its primary
output so identical reruns are verifiable by digest.
"""
from __future__ import annotations

import json
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import __version__
from .annotations import (
    MaceConfig, aggregate_ims, apply_expert_overrides, fit_mace,
    filter_low_competence, flag_outliers, krippendorff_alpha, make_splits,
    read_annotations, read_overrides, write_aggregated, read_aggregated,
    PROVENANCE_AUTO,
)
from .config import Config, config_hash, load_config
from .corpus import DocumentStore, ingest_documents, link_mentions, load_corpus_dir
from .errors import PipelineError, ValidationError
from .findings import (
    TrainConfig, evaluate_classifier, extract_findings, load_model,
    read_findings, save_model, train_classifier, write_findings,
)
from .hashing import make_pair_id
from .manifest import ManifestTimer, RunManifest
from .mixedlm import (
    CategoricalTerm, NumericTerm, RegressionSpec, build_design,
    emit_forest_plot, emit_regression_table, fit_design,
)
from .pairs import (
    AutoThresholds, NEEDS_ANNOTATION, SampleSpec, auto_label, generate_pairs,
    pilot_sample, read_pairs, read_score_file, score_with_model,
    stratified_sample, write_pairs,
)
from .retrieval import Bm25Index, ScorerRanker, evaluate_retrieval, read_claims, read_pool
from .scoring import (
    CosineSimilarityScorer, ExternalScoreTable, LexicalOverlapScorer,
    ProbabilityScorer, evaluate_scorer, join_eval_items, read_matched,
    read_value_table, score_corpus,
)
from .similarity import TfidfProvider, fit_tfidf

CONFIG_ENV = "SCICOMM_DRIFT_CONFIG"
logger = logging.getLogger(__name__)


@dataclass
class AppState:
    config: Config
    config_path: str | None
    threads: int
    strict: bool


def common_options(fn):
    fn = click.option("--config", "config_path", envvar=CONFIG_ENV, default=None,
                      type=click.Path(dir_okay=False),
                      help=f"Config file (YAML). Env: {CONFIG_ENV}.")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=1,
                      show_default=True, help="Worker cap; 1 keeps runs bit-reproducible.")(fn)
    fn = click.option("--strict", is_flag=True,
                      help="Fail on malformed or unresolved inputs instead of skipping.")(fn)
    return fn


def _state(config_path: str | None, threads: int, strict: bool) -> AppState:
    if config_path is not None and not Path(config_path).exists():
        raise ValidationError(f"config file not found: {config_path}")
    return AppState(config=load_config(config_path), config_path=config_path,
                    threads=threads, strict=strict)


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing required input: {what}")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what} not found: {path}")
    return p


def _new_manifest(state: AppState, command: str) -> RunManifest:
    manifest = RunManifest(command=command, config_hash=config_hash(state.config),
                           tool_version=__version__)
    if state.config_path and Path(state.config_path).exists():
        manifest.add_input(state.config_path)
    return manifest


def _finish_manifest(manifest: RunManifest, anchor: Path) -> Path:
    target = anchor / "manifest.json" if anchor.is_dir() else anchor.with_name(
        anchor.name + ".manifest.json")
    manifest.write(target)
    return target


def _load_store(corpus: str, kind_hint: str | None, strict: bool) -> DocumentStore:
    path = _require(corpus, "--corpus")
    if path.is_dir():
        store, report = load_corpus_dir(path, strict=strict)
    else:
        store, report = ingest_documents(path, kind_hint, strict=strict)
    if report.rejected:
        click.echo(f"skipped {len(report.rejected)} malformed document lines", err=True)
        for line_no, reason in report.rejected[:5]:
            click.echo(f"  line {line_no}: {reason}", err=True)
    if len(store) == 0:
        raise ValidationError(f"no usable documents in {corpus}")
    return store


def _read_labeled(path: Path) -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                rows.append((str(obj["text"]), str(obj["label"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{line_no}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no labeled sentences")
    return rows


@click.group(name="scicomm-drift")
@click.version_option(version=__version__, prog_name="scicomm-drift")
def cli() -> None:
    """Pipeline for measuring information drift between papers and mentions."""


# ---------------------------------------------------------------- extract

@cli.command("extract")
@common_options
@click.option("--corpus", type=click.Path(), default=None,
              help="Corpus directory (papers/news/tweets.jsonl) or one JSONL file.")
@click.option("--kind-hint", type=click.Choice(["paper", "news", "tweet"]), default=None,
              help="Source kind for documents lacking one (single-file corpus).")
@click.option("--train-corpus", type=click.Path(), default=None,
              help='Labeled sentences to train on: JSONL {"text","label"}.')
@click.option("--eval-corpus", type=click.Path(), default=None,
              help="Held-out labeled sentences to report metrics on.")
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Existing sentence-classifier model file.")
@click.option("--model-out", type=click.Path(), default=None,
              help="Where to save the freshly trained model.")
@click.option("--out", type=click.Path(), default=None,
              help="Findings output (JSONL).")
def cmd_extract(config_path, threads, strict, corpus, kind_hint, train_corpus,
                eval_corpus, model_path, model_out, out) -> None:
    """Train or load the sentence classifier and extract finding sentences."""
    state = _state(config_path, threads, strict)
    manifest = _new_manifest(state, "extract")
    with ManifestTimer(manifest):
        model = None
        if train_corpus:
            train_file = _require(train_corpus, "--train-corpus")
            manifest.add_input(train_file)
            cc = state.config.classifier
            model = train_classifier(
                _read_labeled(train_file),
                TrainConfig(hash_dim=cc.hash_dim, l2_penalty=cc.l2_penalty,
                            max_epochs=cc.max_epochs, tol=cc.tol, seed=cc.seed))
            click.echo(f"trained classifier on {train_file}: "
                       f"{'converged' if model.converged else 'epoch cap reached'}, "
                       f"{len(model.history)} epochs, "
                       f"final loss {model.history[-1].loss:.6f}")
            if model_out:
                save_model(model, model_out)
                manifest.add_output(model_out)
                click.echo(f"model saved to {model_out}")
        elif model_path:
            model_file = _require(model_path, "--model")
            manifest.add_input(model_file)
            model = load_model(model_file)
        if model is None:
            raise ValidationError("nothing to do: pass --train-corpus or --model")

        if eval_corpus:
            eval_file = _require(eval_corpus, "--eval-corpus")
            manifest.add_input(eval_file)
            report = evaluate_classifier(model, _read_labeled(eval_file))
            click.echo(f"{'class':<14}{'precision':>10}{'recall':>10}{'f1':>10}{'n':>7}")
            for cls, m in sorted(report.per_class.items()):
                click.echo(f"{cls:<14}{m.precision:>10.3f}{m.recall:>10.3f}"
                           f"{m.f1:>10.3f}{m.support:>7}")
            click.echo(f"macro-F1 {report.macro_f1:.3f}  accuracy {report.accuracy:.3f}")

        if out:
            store = _load_store(corpus, kind_hint, strict)
            manifest_in = Path(corpus)
            if manifest_in.is_file():
                manifest.add_input(manifest_in)
            findings = []
            for doc in sorted(store.all_documents(), key=lambda d: d.doc_id):
                findings.extend(extract_findings(model, doc))
            n = write_findings(findings, out)
            manifest.add_output(out)
            click.echo(f"extracted {n} findings from {len(store)} documents -> {out}")
    if out or model_out:
        target = _finish_manifest(manifest, Path(out or model_out))
        click.echo(f"manifest: {target}")


# ------------------------------------------------------------------- pair

@cli.command("pair")
@common_options
@click.option("--corpus", type=click.Path(), required=True,
              help="Corpus directory or JSONL file.")
@click.option("--kind-hint", type=click.Choice(["paper", "news", "tweet"]), default=None)
@click.option("--findings", "findings_path", type=click.Path(), required=True,
              help="Findings produced by the extract stage.")
@click.option("--vectors", type=click.Path(), default=None,
              help="Embedding interchange file keyed by finding id "
                   "(default: deterministic tf-idf over the findings).")
@click.option("--hash-dim", type=click.IntRange(min=2), default=None,
              help="tf-idf hash dimension override.")
@click.option("--out", type=click.Path(), required=True, help="Pair output (JSONL).")
def cmd_pair(config_path, threads, strict, corpus, kind_hint, findings_path,
             vectors, hash_dim, out) -> None:
    """Generate candidate (paper finding, mention finding) pairs via DOI links."""
    state = _state(config_path, threads, strict)
    manifest = _new_manifest(state, "pair")
    with ManifestTimer(manifest):
        store = _load_store(corpus, kind_hint, strict)
        findings_file = _require(findings_path, "--findings")
        manifest.add_input(findings_file)
        findings = read_findings(findings_file)
        links = link_mentions(store)
        if links.unresolved:
            click.echo(f"{len(links.unresolved)} mentions link to no ingested paper",
                       err=True)
            if strict:
                sample = ", ".join(d for d, _ in links.unresolved[:5])
                raise ValidationError(
                    f"unresolved DOI links under --strict (first: {sample})")
        if vectors:
            from .similarity import load_vectors
            vec_file = _require(vectors, "--vectors")
            manifest.add_input(vec_file)
            provider = load_vectors(vec_file)
        else:
            dim = hash_dim or state.config.scoring.hash_dim
            texts = [f.text for rows in
                     (findings[k] for k in sorted(findings)) for f in rows]
            if not texts:
                raise ValidationError(f"no findings in {findings_path}")
            provider = TfidfProvider(fit_tfidf(texts, hash_dim=dim))
        n = write_pairs(
            generate_pairs(store, links, findings, provider, threads=threads), out)
        manifest.add_output(out)
        click.echo(f"{len(links.entries)} links -> {n} candidate pairs -> {out}")
    target = _finish_manifest(manifest, Path(out))
    click.echo(f"manifest: {target}")


# ----------------------------------------------------------------- sample

@cli.command("sample")
@common_options
@click.option("--pairs", "pairs_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), required=True,
              help="Sampled pairs for annotation (JSONL).")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Per-bin availability CSV.")
@click.option("--scores", type=click.Path(), default=None,
              help='External model scores {"pair_id","score"} for binning.')
@click.option("--pilot", is_flag=True,
              help="Pilot draw: 20 per bin over the full [0, 1] range.")
@click.option("--all-pairs", is_flag=True,
              help="Sample from every pair, not only the needs-annotation band.")
@click.option("--lo", type=float, default=None)
@click.option("--hi", type=float, default=None)
@click.option("--bin-width", type=float, default=None)
@click.option("--per-bin", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
def cmd_sample(config_path, threads, strict, pairs_path, out, report_path,
               scores, pilot, all_pairs, lo, hi, bin_width, per_bin, seed) -> None:
    """Draw a stratified annotation sample across similarity bins."""
    state = _state(config_path, threads, strict)
    cfg = state.config.sampling
    manifest = _new_manifest(state, "sample")
    with ManifestTimer(manifest):
        pairs_file = _require(pairs_path, "--pairs")
        manifest.add_input(pairs_file)
        pairs = read_pairs(pairs_file)
        score_source = cfg.score_source
        if scores:
            score_file = _require(scores, "--scores")
            manifest.add_input(score_file)
            pairs = score_with_model(pairs, read_score_file(score_file))
            score_source = "external_model"
        elif score_source == "external_model":
            raise ValidationError("config asks for external_model binning; pass --scores")

        al = state.config.auto_label
        thresholds = AutoThresholds(unmatched_below=al.cos_low,
                                    matched_above=al.cos_high,
                                    matched_jaccard=al.jaccard_min)
        if not (pilot or all_pairs):
            pairs = [p for p in pairs if auto_label(p, thresholds) == NEEDS_ANNOTATION]
        if not pairs:
            raise ValidationError("no pairs eligible for sampling")

        if pilot:
            sample, bins = pilot_sample(pairs,
                                        per_bin=per_bin or 20,
                                        seed=seed if seed is not None else cfg.seed,
                                        score_source=score_source)
        else:
            spec = SampleSpec(
                lo=lo if lo is not None else cfg.lo,
                hi=hi if hi is not None else cfg.hi,
                bin_width=bin_width if bin_width is not None else cfg.bin_width,
                per_bin=per_bin if per_bin is not None else cfg.per_bin,
                seed=seed if seed is not None else cfg.seed,
                score_source=score_source)
            sample, bins = stratified_sample(pairs, spec)
        n = write_pairs(sample, out)
        manifest.add_output(out)
        lines = ["bin_lo,bin_hi,available,drawn,shortfall"]
        for b in bins:
            lines.append(f"{b.bin_lo:.6g},{b.bin_hi:.6g},{b.available},{b.drawn},{b.shortfall}")
        if report_path:
            Path(report_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
            manifest.add_output(report_path)
        short = sum(b.shortfall for b in bins)
        click.echo(f"sampled {n} pairs across {len(bins)} bins "
                   f"({short} short of target) -> {out}")
        for b in bins:
            if b.shortfall:
                click.echo(f"  bin [{b.bin_lo:.3g}, {b.bin_hi:.3g}): "
                           f"{b.available} available, short {b.shortfall}", err=True)
    target = _finish_manifest(manifest, Path(out))
    click.echo(f"manifest: {target}")


# -------------------------------------------------------------- aggregate

@cli.command("aggregate")
@common_options
@click.option("--annotations", "annotations_path", type=click.Path(), required=True,
              help='Crowd ratings: JSONL {"pair_id","annotator_id","rating"}.')
@click.option("--pairs", "pairs_path", type=click.Path(), required=True,
              help="Candidate pairs (for auto labels and split metadata).")
@click.option("--overrides", type=click.Path(), default=None,
              help="Expert rating overrides (JSONL).")
@click.option("--out", type=click.Path(), required=True,
              help="Aggregated ratings output (JSONL).")
@click.option("--alpha-metric", type=click.Choice(["nominal", "interval", "ordinal"]),
              default="interval", show_default=True)
@click.option("--drop-fraction", type=float, default=None,
              help="Fraction of least-competent annotators to drop.")
@click.option("--outlier-std", type=float, default=None,
              help="Rating-std threshold for flagging pairs.")
@click.option("--seed", type=int, default=None, help="Model-fit seed override.")
def cmd_aggregate(config_path, threads, strict, annotations_path, pairs_path,
                  overrides, out, alpha_metric, drop_fraction, outlier_std, seed) -> None:
    """Fit annotator competences, filter, aggregate ratings, assign splits."""
    state = _state(config_path, threads, strict)
    mc = state.config.mace
    manifest = _new_manifest(state, "aggregate")
    with ManifestTimer(manifest):
        ann_file = _require(annotations_path, "--annotations")
        pairs_file = _require(pairs_path, "--pairs")
        manifest.add_input(ann_file)
        manifest.add_input(pairs_file)
        records = read_annotations(ann_file)
        if not records:
            raise ValidationError(f"{annotations_path}: no annotation records")
        alpha_raw = krippendorff_alpha(records, metric=alpha_metric)
        click.echo(f"agreement alpha ({alpha_metric}) raw: {alpha_raw:.4f}")

        result = fit_mace(
            records,
            MaceConfig(max_iter=mc.max_iters, tol=mc.tol, n_restarts=mc.restarts,
                       smoothing_alpha=mc.smoothing,
                       seed=seed if seed is not None else mc.seed),
            threads=threads)
        click.echo(f"competence model: restart {result.best_restart} won, "
                   f"{'converged' if result.converged else 'iteration cap reached'}, "
                   f"final objective {result.penalized[-1]:.4f}")

        frac = drop_fraction if drop_fraction is not None else mc.drop_fraction
        kept, filt = filter_low_competence(records, result.profiles, frac)
        if filt.dropped_annotators:
            click.echo(f"dropped {len(filt.dropped_annotators)} low-competence "
                       f"annotators: {', '.join(filt.dropped_annotators)}")
        if filt.orphaned_pair_ids:
            click.echo(f"{len(filt.orphaned_pair_ids)} pairs lost all ratings",
                       err=True)
        if kept and frac > 0:
            try:
                alpha_kept = krippendorff_alpha(kept, metric=alpha_metric)
                click.echo(f"agreement alpha ({alpha_metric}) after filtering: "
                           f"{alpha_kept:.4f}")
            except ValidationError:
                pass

        std_bar = outlier_std if outlier_std is not None else mc.outlier_std
        flagged = flag_outliers(kept, std_bar)
        click.echo(f"{len(flagged)} pairs flagged for expert review "
                   f"(rating std > {std_bar})")
        touched: set[str] = set()
        if overrides:
            ov_file = _require(overrides, "--overrides")
            manifest.add_input(ov_file)
            kept, touched = apply_expert_overrides(kept, read_overrides(ov_file), flagged)
            click.echo(f"applied expert overrides on {len(touched)} pairs")

        pairs = read_pairs(pairs_file)
        annotated_ids = {r.pair_id for r in kept}
        al = state.config.auto_label
        thresholds = AutoThresholds(unmatched_below=al.cos_low,
                                    matched_above=al.cos_high,
                                    matched_jaccard=al.jaccard_min)
        auto = {}
        for p in pairs:
            if p.pair_id in annotated_ids:
                continue
            label = auto_label(p, thresholds)
            if label != NEEDS_ANNOTATION:
                auto[p.pair_id] = label
        aggregated = aggregate_ims(kept, auto, touched, flagged)

        sp = state.config.split
        pair_meta = {p.pair_id: (p.paper_doi, p.field) for p in pairs}
        known = [a for a in aggregated if a.pair_id in pair_meta]
        if len(known) != len(aggregated):
            missing = len(aggregated) - len(known)
            raise ValidationError(
                f"{missing} aggregated pairs missing from {pairs_path}")
        assignment = make_splits(aggregated, pair_meta,
                                 ratios=(sp.train, sp.dev, sp.test), seed=sp.seed)
        for agg in aggregated:
            agg.split = assignment[agg.pair_id]
        n = write_aggregated(aggregated, out)
        manifest.add_output(out)
        by_prov: dict[str, int] = {}
        by_split: dict[str, int] = {}
        for agg in aggregated:
            by_prov[agg.provenance] = by_prov.get(agg.provenance, 0) + 1
            by_split[agg.split] = by_split.get(agg.split, 0) + 1
        click.echo(f"aggregated {n} pairs -> {out}")
        click.echo("  provenance: " + ", ".join(
            f"{k}={v}" for k, v in sorted(by_prov.items())))
        click.echo("  splits: " + ", ".join(
            f"{k}={by_split.get(k, 0)}" for k in ("train", "dev", "test")))
    target = _finish_manifest(manifest, Path(out))
    click.echo(f"manifest: {target}")


# ------------------------------------------------------------------ score

def _build_scorer(kind: str, table_path: str | None, hash_dim: int,
                  pairs: list | None, manifest: RunManifest):
    if kind == "cosine":
        if not pairs:
            raise ValidationError("cosine scorer needs pair texts to fit on")
        texts: list[str] = []
        for p in pairs:
            texts.append(p.finding_paper)
            texts.append(p.finding_mention)
        return CosineSimilarityScorer(TfidfProvider(fit_tfidf(texts, hash_dim)))
    if kind == "lexical":
        return LexicalOverlapScorer()
    if kind in ("probability", "table"):
        file = _require(table_path, "--table")
        manifest.add_input(file)
        values = read_value_table(file)
        return ProbabilityScorer(values) if kind == "probability" else ExternalScoreTable(values)
    raise ValidationError(f"unknown scorer {kind!r}")


@cli.command("score")
@common_options
@click.option("--pairs", "pairs_path", type=click.Path(), required=True)
@click.option("--scorer", "scorer_kind",
              type=click.Choice(["cosine", "lexical", "probability", "table"]),
              default="cosine", show_default=True)
@click.option("--table", "table_path", type=click.Path(), default=None,
              help='Value table {"pair_id","value"} for probability/table scorers.')
@click.option("--threshold", type=float, default=None,
              help="Match bar on the 1..5 scale (strictly greater keeps a pair).")
@click.option("--out", type=click.Path(), required=True,
              help="Matched pairs with ims_pred (JSONL).")
def cmd_score(config_path, threads, strict, pairs_path, scorer_kind, table_path,
              threshold, out) -> None:
    """Score every pair and keep those above the match threshold."""
    state = _state(config_path, threads, strict)
    sc = state.config.scoring
    manifest = _new_manifest(state, "score")
    with ManifestTimer(manifest):
        pairs_file = _require(pairs_path, "--pairs")
        manifest.add_input(pairs_file)
        pairs = read_pairs(pairs_file)
        scorer = _build_scorer(scorer_kind, table_path, sc.hash_dim, pairs, manifest)
        bar = threshold if threshold is not None else sc.match_threshold
        if not 1.0 <= bar <= 5.0:
            raise ValidationError(f"threshold {bar} outside [1, 5]")
        counters = score_corpus(scorer, pairs, out, threshold=bar)
        manifest.add_output(out)
        manifest.extra = {"scorer": scorer_kind, "threshold": bar,
                          "n_scored": counters.n_scored,
                          "n_matched": counters.n_matched}
        click.echo(f"scored {counters.n_scored} pairs, "
                   f"{counters.n_matched} matched (> {bar}) -> {out}")
    target = _finish_manifest(manifest, Path(out))
    click.echo(f"manifest: {target}")


# ------------------------------------------------------------------- eval

@cli.command("eval")
@common_options
@click.option("--pairs", "pairs_path", type=click.Path(), required=True)
@click.option("--aggregated", "aggregated_path", type=click.Path(), required=True)
@click.option("--scorer", "scorer_kind",
              type=click.Choice(["cosine", "lexical", "probability", "table"]),
              default="cosine", show_default=True)
@click.option("--table", "table_path", type=click.Path(), default=None)
@click.option("--split", type=click.Choice(["train", "dev", "test"]), default=None,
              help="Evaluate one split only.")
@click.option("--out", type=click.Path(), default=None, help="Metrics CSV.")
def cmd_eval(config_path, threads, strict, pairs_path, aggregated_path,
             scorer_kind, table_path, split, out) -> None:
    """Compare a scorer against human ratings (MSE, Pearson r)."""
    state = _state(config_path, threads, strict)
    manifest = _new_manifest(state, "eval")
    with ManifestTimer(manifest):
        pairs_file = _require(pairs_path, "--pairs")
        agg_file = _require(aggregated_path, "--aggregated")
        manifest.add_input(pairs_file)
        manifest.add_input(agg_file)
        pairs = read_pairs(pairs_file)
        aggregated = read_aggregated(agg_file)
        items = join_eval_items(aggregated, {p.pair_id: p for p in pairs}, split=split)
        if not items:
            raise ValidationError("no human-rated pairs to evaluate"
                                  + (f" in split {split!r}" if split else ""))
        scorer = _build_scorer(scorer_kind, table_path, state.config.scoring.hash_dim,
                               pairs, manifest)
        report = evaluate_scorer(scorer, items)
        rows = [("overall", report.overall), ("news", report.news),
                ("tweets", report.tweets)]
        click.echo(f"{'subset':<10}{'n':>7}{'mse':>10}{'pearson_r':>12}")
        csv_lines = ["subset,n,mse,pearson_r"]
        for name, metrics in rows:
            if metrics is None:
                continue
            r_txt = f"{metrics.pearson_r:.4f}" if metrics.pearson_r is not None else "n/a"
            click.echo(f"{name:<10}{metrics.n:>7}{metrics.mse:>10.4f}{r_txt:>12}")
            csv_lines.append(f"{name},{metrics.n},{metrics.mse!r},"
                             + (repr(metrics.pearson_r)
                                if metrics.pearson_r is not None else ""))
        if out:
            Path(out).write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
            manifest.add_output(out)
            click.echo(f"metrics -> {out}")
    if out:
        target = _finish_manifest(manifest, Path(out))
        click.echo(f"manifest: {target}")


# -------------------------------------------------------------- retrieval

@cli.command("retrieval")
@common_options
@click.option("--claims", "claims_path", type=click.Path(), required=True,
              help='Claims JSONL {"claim_id","text","gold_evidence_ids"}.')
@click.option("--pool", "pool_path", type=click.Path(), required=True,
              help='Evidence pool JSONL {"evidence_id","text"}.')
@click.option("--method", type=click.Choice(["bm25", "lexical", "cosine"]),
              default="bm25", show_default=True)
@click.option("--dataset", default="default", show_default=True,
              help="Dataset label for the report row.")
@click.option("--k1", type=float, default=None)
@click.option("--b", type=float, default=None)
@click.option("--mrr-variant", type=click.Choice(["all_gold", "first_relevant"]),
              default=None)
@click.option("--out", type=click.Path(), default=None,
              help="Report CSV (method, dataset, map, mrr; percent scale).")
def cmd_retrieval(config_path, threads, strict, claims_path, pool_path, method,
                  dataset, k1, b, mrr_variant, out) -> None:
    """Rank the evidence pool for each claim and report MAP / MRR."""
    state = _state(config_path, threads, strict)
    rt = state.config.retrieval
    manifest = _new_manifest(state, "retrieval")
    with ManifestTimer(manifest):
        claims_file = _require(claims_path, "--claims")
        pool_file = _require(pool_path, "--pool")
        manifest.add_input(claims_file)
        manifest.add_input(pool_file)
        claims = read_claims(claims_file)
        pool = read_pool(pool_file)
        if method == "bm25":
            ranker = Bm25Index(pool,
                               k1=k1 if k1 is not None else rt.k1,
                               b=b if b is not None else rt.b)
        elif method == "lexical":
            ranker = ScorerRanker(LexicalOverlapScorer())
        else:
            texts = sorted(pool.values()) + sorted(c.text for c in claims)
            provider = TfidfProvider(fit_tfidf(texts, state.config.scoring.hash_dim))
            ranker = ScorerRanker(CosineSimilarityScorer(provider))
        variant = mrr_variant if mrr_variant is not None else rt.mrr_variant
        report = evaluate_retrieval(ranker, claims, pool, mrr_variant=variant)
        click.echo(f"{method} on {dataset}: "
                   f"MAP {100 * report.map:.2f}  MRR {100 * report.mrr:.2f} "
                   f"({len(claims)} claims, pool {len(pool)})")
        if out:
            Path(out).write_text(
                "method,dataset,map,mrr\n"
                f"{method},{dataset},{100 * report.map:.2f},{100 * report.mrr:.2f}\n",
                encoding="utf-8")
            manifest.add_output(out)
            click.echo(f"report -> {out}")
    if out:
        target = _finish_manifest(manifest, Path(out))
        click.echo(f"manifest: {target}")


# ---------------------------------------------------------------- analyze

def _pair_mentions(store: DocumentStore, findings: dict) -> dict[str, str]:
    """pair_id -> mention doc_id, rebuilt from the corpus and findings."""
    links = link_mentions(store)
    papers = store.papers_by_doi()
    out: dict[str, str] = {}
    for entry in links.entries:
        paper = papers[entry.paper_doi]
        for pf in findings.get(paper.doc_id, []):
            for mf in findings.get(entry.mention_doc_id, []):
                pid = make_pair_id(pf.doc_id, pf.sent_idx, mf.doc_id, mf.sent_idx)
                out[pid] = entry.mention_doc_id
    return out


def _emit_fit(fit, prefix: Path, what: str) -> list[Path]:
    text_path = prefix.with_suffix(".txt")
    csv_path = prefix.with_suffix(".csv")
    svg_path = prefix.with_name(prefix.name + "_forest").with_suffix(".svg")
    fcsv_path = prefix.with_name(prefix.name + "_forest").with_suffix(".csv")
    text_path.write_text(emit_regression_table(fit, "text"), encoding="utf-8")
    csv_path.write_text(emit_regression_table(fit, "csv"), encoding="utf-8")
    emit_forest_plot(fit, svg_path, fcsv_path)
    click.echo(f"{what}: {fit.n_obs} rows, {fit.n_groups} groups, "
               f"residual var {fit.sigma2_resid:.4f}, group var {fit.sigma2_group:.4f}")
    return [text_path, csv_path, svg_path, fcsv_path]


@cli.command("analyze")
@common_options
@click.option("--matched", "matched_path", type=click.Path(), required=True,
              help="Matched pairs with ims_pred from the score stage.")
@click.option("--corpus", type=click.Path(), default=None,
              help="Corpus for user-trait analysis (tweets need metadata).")
@click.option("--findings", "findings_path", type=click.Path(), default=None,
              help="Findings file (required with --corpus to key pairs).")
@click.option("--min-group-size", type=click.IntRange(min=1), default=None,
              help="Papers with fewer matched pairs pool into one group.")
@click.option("--out-dir", type=click.Path(), required=True)
def cmd_analyze(config_path, threads, strict, matched_path, corpus, findings_path,
                min_group_size, out_dir) -> None:
    """Fit mixed models for field effects and tweet-account effects."""
    state = _state(config_path, threads, strict)
    rg = state.config.regression
    manifest = _new_manifest(state, "analyze")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    min_size = min_group_size if min_group_size is not None else rg.min_group_size
    with ManifestTimer(manifest):
        matched_file = _require(matched_path, "--matched")
        manifest.add_input(matched_file)
        rows = read_matched(matched_file)
        if not rows:
            raise ValidationError(f"{matched_path}: no matched pairs")

        spec1 = RegressionSpec(
            response="ims_pred",
            terms=[CategoricalTerm("field", reference="other")],
            group="paper_doi", min_group_size=min_size)
        design1 = build_design(rows, spec1)
        fit1 = fit_design(design1, spec1,
                          lambda_log_range=(rg.lambda_log_lo, rg.lambda_log_hi),
                          tol=rg.tol)
        for path in _emit_fit(fit1, out / "field_effects", "field effects"):
            manifest.add_output(path)

        if corpus and findings_path:
            store = _load_store(corpus, None, strict)
            findings_file = _require(findings_path, "--findings")
            manifest.add_input(findings_file)
            mention_of = _pair_mentions(store, read_findings(findings_file))
            tweet_rows = []
            for row in rows:
                if row.get("source_kind") != "tweet":
                    continue
                doc_id = mention_of.get(row["pair_id"])
                if doc_id is None:
                    raise ValidationError(
                        f"matched pair {row['pair_id']} not derivable from "
                        f"this corpus and findings file")
                meta = store.get(doc_id).user_meta
                if meta is None:
                    raise ValidationError(f"tweet {doc_id} lacks user metadata")
                tweet_rows.append({
                    "ims_pred": row["ims_pred"],
                    "paper_doi": row["paper_doi"],
                    "is_verified": meta.is_verified,
                    "is_organization": meta.is_organization,
                    "followers": meta.followers,
                    "following": meta.following,
                    "account_age_years": meta.account_age_years,
                })
            if tweet_rows:
                spec2 = RegressionSpec(
                    response="ims_pred",
                    terms=[NumericTerm("is_verified"),
                           NumericTerm("is_organization"),
                           NumericTerm("followers", "log1p"),
                           NumericTerm("following", "log1p"),
                           NumericTerm("account_age_years")],
                    group="paper_doi", min_group_size=min_size)
                design2 = build_design(tweet_rows, spec2)
                fit2 = fit_design(design2, spec2,
                                  lambda_log_range=(rg.lambda_log_lo, rg.lambda_log_hi),
                                  tol=rg.tol)
                for path in _emit_fit(fit2, out / "account_effects",
                                      "tweet account effects"):
                    manifest.add_output(path)
            else:
                click.echo("no matched tweet pairs; skipping account analysis")
        elif corpus or findings_path:
            raise ValidationError("account analysis needs both --corpus and --findings")
    target = _finish_manifest(manifest, out)
    click.echo(f"analysis artifacts -> {out} (manifest: {target})")


# ----------------------------------------------------------------- report

@cli.command("report")
@common_options
@click.option("--aggregated", "aggregated_path", type=click.Path(), default=None)
@click.option("--matched", "matched_path", type=click.Path(), default=None)
@click.option("--include", "includes", type=click.Path(), multiple=True,
              help="Extra artifacts (CSV tables, SVG plots) to copy into the bundle.")
@click.option("--out-dir", type=click.Path(), required=True)
def cmd_report(config_path, threads, strict, aggregated_path, matched_path,
               includes, out_dir) -> None:
    """Bundle pipeline outputs and a summary into one diffable directory."""
    state = _state(config_path, threads, strict)
    if not (aggregated_path or matched_path or includes):
        raise ValidationError("report needs --aggregated, --matched, or --include")
    manifest = _new_manifest(state, "report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = [f"scicomm-drift {__version__} report", ""]
    with ManifestTimer(manifest):
        if aggregated_path:
            agg_file = _require(aggregated_path, "--aggregated")
            manifest.add_input(agg_file)
            aggregated = read_aggregated(agg_file)
            by_prov: dict[str, int] = {}
            by_split: dict[str, int] = {}
            human = []
            for agg in aggregated:
                by_prov[agg.provenance] = by_prov.get(agg.provenance, 0) + 1
                if agg.split:
                    by_split[agg.split] = by_split.get(agg.split, 0) + 1
                if agg.provenance != PROVENANCE_AUTO:
                    human.append(agg.ims)
            lines.append(f"rated pairs: {len(aggregated)}")
            lines.append("  by provenance: " + ", ".join(
                f"{k}={v}" for k, v in sorted(by_prov.items())))
            if by_split:
                lines.append("  by split: " + ", ".join(
                    f"{k}={by_split.get(k, 0)}" for k in ("train", "dev", "test")))
            if human:
                mean = sum(human) / len(human)
                lines.append(f"  human-rated mean score: {mean:.3f} (n={len(human)})")
            flagged = sum(1 for a in aggregated if a.flagged_outlier)
            lines.append(f"  flagged for expert review: {flagged}")
            lines.append("")
        if matched_path:
            matched_file = _require(matched_path, "--matched")
            manifest.add_input(matched_file)
            rows = read_matched(matched_file)
            lines.append(f"matched pairs: {len(rows)}")
            by_kind: dict[str, int] = {}
            for row in rows:
                by_kind[row.get("source_kind", "?")] = by_kind.get(
                    row.get("source_kind", "?"), 0) + 1
            if rows:
                mean_pred = sum(r["ims_pred"] for r in rows) / len(rows)
                lines.append("  by source: " + ", ".join(
                    f"{k}={v}" for k, v in sorted(by_kind.items())))
                lines.append(f"  mean predicted score: {mean_pred:.3f}")
            lines.append("")
        for item in includes:
            src = _require(item, "--include")
            dest = out / src.name
            if src.resolve() != dest.resolve():
                shutil.copyfile(src, dest)
            manifest.add_output(dest)
            lines.append(f"bundled: {src.name}")
        summary = out / "summary.txt"
        summary.write_text("\n".join(lines).rstrip() + "\n", encoding="utf-8")
        manifest.add_output(summary)
    target = _finish_manifest(manifest, out)
    click.echo(f"report bundle -> {out} (manifest: {target})")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit codes.

    0 success; 1 validation or usage error; 2 unexpected runtime failure.
    """
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (PipelineError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # noqa: BLE001 - the documented catch-all exit path
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
