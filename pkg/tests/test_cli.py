"""End-to-end command-line runs on the bundled mini corpus."""
import contextlib
import hashlib
import io
import json
from pathlib import Path

import pytest

from scicomm_drift.cli import main


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, fixtures_dir):
    """Run every stage once; tests pick apart the outputs."""
    d = tmp_path_factory.mktemp("cli_run")
    cfg = str(fixtures_dir / "config.yaml")
    corpus = str(fixtures_dir / "mini_corpus")
    paths = {
        "model": d / "model.bin",
        "findings": d / "findings.jsonl",
        "pairs": d / "pairs.jsonl",
        "sampled": d / "sampled.jsonl",
        "bins": d / "bins.csv",
        "aggregated": d / "aggregated.jsonl",
        "matched": d / "matched.jsonl",
        "metrics": d / "metrics.csv",
        "retrieval": d / "retrieval.csv",
        "analysis": d / "analysis",
        "report": d / "report",
    }
    stages = {
        "extract": ["extract", "--config", cfg,
                    "--train-corpus", str(fixtures_dir / "train_sentences.jsonl"),
                    "--eval-corpus", str(fixtures_dir / "eval_sentences.jsonl"),
                    "--corpus", corpus,
                    "--model-out", str(paths["model"]),
                    "--out", str(paths["findings"])],
        "pair": ["pair", "--config", cfg, "--corpus", corpus,
                 "--findings", str(paths["findings"]),
                 "--out", str(paths["pairs"])],
        "sample": ["sample", "--config", cfg, "--pairs", str(paths["pairs"]),
                   "--out", str(paths["sampled"]),
                   "--report", str(paths["bins"])],
        "aggregate": ["aggregate", "--config", cfg,
                      "--annotations", str(fixtures_dir / "annotations.jsonl"),
                      "--pairs", str(paths["pairs"]),
                      "--overrides", str(fixtures_dir / "expert_overrides.jsonl"),
                      "--out", str(paths["aggregated"])],
        "score": ["score", "--config", cfg, "--pairs", str(paths["pairs"]),
                  "--out", str(paths["matched"])],
        "eval": ["eval", "--config", cfg, "--pairs", str(paths["pairs"]),
                 "--aggregated", str(paths["aggregated"]),
                 "--out", str(paths["metrics"])],
        "retrieval": ["retrieval", "--config", cfg, "--dataset", "mini",
                      "--claims", str(fixtures_dir / "claims.jsonl"),
                      "--pool", str(fixtures_dir / "evidence_pool.jsonl"),
                      "--out", str(paths["retrieval"])],
        "analyze": ["analyze", "--config", cfg, "--matched", str(paths["matched"]),
                    "--corpus", corpus, "--findings", str(paths["findings"]),
                    "--out-dir", str(paths["analysis"])],
        "report": ["report", "--config", cfg,
                   "--aggregated", str(paths["aggregated"]),
                   "--matched", str(paths["matched"]),
                   "--include", str(paths["analysis"] / "field_effects.csv"),
                   "--out-dir", str(paths["report"])],
    }
    results = {}
    for name, argv in stages.items():
        code, out, err = run_cli(argv)
        assert code == 0, f"{name} failed ({code}):\n{out}\n{err}"
        results[name] = (out, err)
    return {"dir": d, "paths": paths, "results": results, "argv": stages}


def test_extract_stage(pipeline):
    out, _ = pipeline["results"]["extract"]
    assert "trained classifier" in out
    assert "macro-F1" in out
    assert "extracted 149 findings from 82 documents" in out
    assert pipeline["paths"]["model"].exists()
    manifest = json.loads(
        (pipeline["dir"] / "findings.jsonl.manifest.json").read_text())
    assert manifest["command"] == "extract"
    assert str(pipeline["paths"]["findings"]) in manifest["outputs"]


def test_pair_stage(pipeline):
    out, _ = pipeline["results"]["pair"]
    assert "70 links -> 418 candidate pairs" in out
    lines = [l for l in pipeline["paths"]["pairs"].read_text().splitlines()
             if l and not l.startswith("#")]
    assert len(lines) == 418


def test_sample_stage(pipeline):
    out, _ = pipeline["results"]["sample"]
    assert "sampled 297 pairs across 10 bins" in out
    bins = pipeline["paths"]["bins"].read_text().splitlines()
    assert bins[0] == "bin_lo,bin_hi,available,drawn,shortfall"
    assert len(bins) == 11
    drawn = sum(int(row.split(",")[3]) for row in bins[1:])
    assert drawn == 297


def test_sample_rerun_is_byte_identical(pipeline, tmp_path):
    argv = list(pipeline["argv"]["sample"])
    argv[argv.index("--out") + 1] = str(tmp_path / "sampled2.jsonl")
    argv[argv.index("--report") + 1] = str(tmp_path / "bins2.csv")
    code, _, _ = run_cli(argv)
    assert code == 0
    assert sha(tmp_path / "sampled2.jsonl") == sha(pipeline["paths"]["sampled"])
    assert sha(tmp_path / "bins2.csv") == sha(pipeline["paths"]["bins"])


def test_aggregate_stage(pipeline):
    out, _ = pipeline["results"]["aggregate"]
    assert "agreement alpha (interval) raw:" in out
    assert "competence model: restart" in out
    assert "applied expert overrides on 2 pairs" in out
    assert "aggregated 418 pairs" in out
    assert "auto=121" in out
    assert "expert_override=2" in out
    assert "annotated=295" in out
    rows = [json.loads(l) for l in
            pipeline["paths"]["aggregated"].read_text().splitlines()
            if l and not l.startswith("#")]
    assert len(rows) == 418
    assert all(r["split"] in ("train", "dev", "test") for r in rows)


def test_score_stage(pipeline):
    out, _ = pipeline["results"]["score"]
    assert "scored 418 pairs" in out
    rows = [json.loads(l) for l in
            pipeline["paths"]["matched"].read_text().splitlines()
            if l and not l.startswith("#")]
    assert rows, "no pairs cleared the match threshold"
    assert all(r["ims_pred"] > 3.0 for r in rows)
    assert f"{len(rows)} matched" in out


def test_eval_stage(pipeline):
    out, _ = pipeline["results"]["eval"]
    assert "pearson_r" in out
    lines = pipeline["paths"]["metrics"].read_text().splitlines()
    assert lines[0] == "subset,n,mse,pearson_r"
    assert lines[1].startswith("overall,297,")
    n_news = int(lines[2].split(",")[1])
    n_tweets = int(lines[3].split(",")[1])
    assert n_news + n_tweets == 297


def test_retrieval_stage(pipeline):
    out, _ = pipeline["results"]["retrieval"]
    assert "bm25 on mini: MAP" in out
    lines = pipeline["paths"]["retrieval"].read_text().splitlines()
    assert lines[0] == "method,dataset,map,mrr"
    assert lines[1].startswith("bm25,mini,")
    map_pct = float(lines[1].split(",")[2])
    assert 0.0 <= map_pct <= 100.0


def test_analyze_stage(pipeline):
    analysis = pipeline["paths"]["analysis"]
    table = (analysis / "field_effects.txt").read_text()
    assert "Mixed Linear Model Regression Results" in table
    assert "Group Var" in table
    csv = (analysis / "field_effects.csv").read_text().splitlines()
    assert csv[0] == "term,coef,std_err,z,p_value,ci_low,ci_high"
    svg = (analysis / "field_effects_forest.svg").read_text()
    assert svg.startswith("<svg")
    # enough matched tweet pairs exist for the account model as well
    assert (analysis / "account_effects.txt").exists()
    assert (analysis / "manifest.json").exists()


def test_report_stage(pipeline):
    report = pipeline["paths"]["report"]
    summary = (report / "summary.txt").read_text()
    assert "rated pairs: 418" in summary
    assert "matched pairs:" in summary
    assert "bundled: field_effects.csv" in summary
    assert (report / "field_effects.csv").exists()
    assert (report / "manifest.json").exists()


# ------------------------------------------------------------- exit codes

def test_version_flag():
    code, out, _ = run_cli(["--version"])
    assert code == 0
    assert "scicomm-drift" in out


def test_missing_required_option():
    code, _, err = run_cli(["pair"])
    assert code == 1
    assert "Missing option" in err


def test_unknown_command():
    code, _, err = run_cli(["flatten"])
    assert code == 1
    assert "No such command" in err


def test_missing_input_file(tmp_path):
    code, _, err = run_cli(["sample", "--pairs", "/nonexistent/p.jsonl",
                            "--out", str(tmp_path / "o.jsonl")])
    assert code == 1
    assert "/nonexistent/p.jsonl" in err


def test_config_file_not_found():
    code, _, err = run_cli(["extract", "--config", "/nonexistent/c.yaml"])
    assert code == 1
    assert "/nonexistent/c.yaml" in err


def test_extract_with_nothing_to_do():
    code, _, err = run_cli(["extract"])
    assert code == 1
    assert "nothing to do" in err


def test_internal_error_exit_code(tmp_path, monkeypatch):
    import scicomm_drift.cli as cli_mod
    pairs = tmp_path / "p.jsonl"
    pairs.write_text("{}\n", encoding="utf-8")

    def boom(path):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli_mod, "read_pairs", boom)
    code, _, err = run_cli(["sample", "--pairs", str(pairs),
                            "--out", str(tmp_path / "o.jsonl")])
    assert code == 2
    assert "internal error: RuntimeError: boom" in err
