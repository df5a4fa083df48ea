from __future__ import annotations

import json
from pathlib import Path

import pytest

from drckit.cli import main

from conftest import chain_records, disambiguation_split, write_corpus_dir, write_doc


@pytest.fixture
def small_corpus_dir(tmp_path: Path) -> Path:
    root = tmp_path / "corpus"
    write_corpus_dir(root, {
        "train": disambiguation_split(5, "tr"),
        "test": disambiguation_split(3, "te"),
    })
    return root


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def experiment_config(tmp_path: Path, corpus_dir: Path, backends,
                      schemes=("default", "OR1"), seeds=None, m=1) -> Path:
    config = {
        "schema_version": 1,
        "corpus": {"name": "disamb", "dir": str(corpus_dir)},
        "schemes": list(schemes),
        "backends": backends,
        "seeds": seeds or list(range(1, 11)),
        "bonferroni_m": m,
        "alpha": 0.05,
        "out_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def test_ingest_valid_corpus(small_corpus_dir, tmp_path, capsys):
    code = run_cli("ingest", small_corpus_dir, "--out", tmp_path / "store")
    out = capsys.readouterr().out
    assert code == 0
    assert "0 violations" in out
    assert (tmp_path / "store" / "corpus" / "train").is_dir()
    report = tmp_path / "store" / "corpus" / "validation.tsv"
    assert report.read_text(encoding="utf-8") == ""


def test_ingest_reports_cyclic_document(tmp_path, capsys):
    root = tmp_path / "corpus"
    write_doc(root / "train", "fine", chain_records(3))
    write_doc(root / "train", "loopy", [
        (0, -1, "null", "ROOT"),
        (1, 0, "ROOT", "one ."),
        (2, 3, "joint", "two ."),
        (3, 2, "joint", "three ."),
    ])
    code = run_cli("ingest", root)
    captured = capsys.readouterr()
    assert code == 1
    assert "loopy" in captured.err
    assert "cycle" in captured.err


def test_ingest_lenient_downgrades_exit(tmp_path):
    root = tmp_path / "corpus"
    write_doc(root / "train", "bad", [(0, -1, "null", "ROOT"),
                                      (1, 9, "ROOT", "one .")])
    assert run_cli("ingest", root) == 1
    assert run_cli("ingest", root, "--lenient") == 0


def test_validate_prints_report_lines(tmp_path, capsys):
    root = tmp_path / "corpus"
    write_doc(root / "dev", "selfy", [(0, -1, "null", "ROOT"),
                                      (1, 0, "ROOT", "one ."),
                                      (2, 2, "joint", "two .")])
    code = run_cli("validate", root)
    out = capsys.readouterr().out
    assert code == 1
    assert "selfy\tself-loop\tself-loop at id 2" in out


def test_stats_single_edge(tmp_path, capsys):
    root = tmp_path / "corpus"
    write_doc(root / "test", "tiny", chain_records(2))
    assert run_cli("stats", root) == 0
    out = capsys.readouterr().out
    assert "100.0%" in out


def test_stats_counted_fixture(tmp_path, capsys):
    root = tmp_path / "corpus"
    write_doc(root / "test", "chain", chain_records(6))
    star = [(0, -1, "null", "ROOT"), (1, 0, "ROOT", "hub .")]
    star += [(i, 1, "elaboration", f"spoke {i} .") for i in range(2, 7)]
    write_doc(root / "test", "star", star)
    run_cli("stats", root)
    out = capsys.readouterr().out
    assert "60.0%" in out     # adjacent
    assert "30.0%" in out     # gaps of 3..5


def test_variants_writes_dataset(small_corpus_dir, tmp_path, capsys):
    out = tmp_path / "variants" / "or1.test.jsonl"
    code = run_cli("variants", small_corpus_dir, "--scheme", "OR1",
                   "--split", "test", "--out", out)
    assert code == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    # 3 docs per label, 2 labels, 2 instances per doc (3 real EDUs each)
    assert len(lines) == 3 * 2 * 2
    assert "wrote" in capsys.readouterr().out


def test_infer_evaluate_compare_analyze_flow(small_corpus_dir, tmp_path, capsys):
    variants = tmp_path / "variants"
    for scheme in ("default", "OR1"):
        for split in ("train", "test"):
            assert run_cli("variants", small_corpus_dir, "--scheme", scheme,
                           "--split", split,
                           "--out", variants / f"{scheme}.{split}.jsonl") == 0

    preds = tmp_path / "preds"
    for scheme in ("default", "OR1"):
        assert run_cli("infer", "--dataset", variants / f"{scheme}.test.jsonl",
                       "--train", variants / f"{scheme}.train.jsonl",
                       "--backend", "cue", "--seeds", "1", "2", "3",
                       "--out", preds / scheme) == 0

    reports = tmp_path / "reports"
    for scheme in ("default", "OR1"):
        pred_files = sorted((preds / scheme).glob("*.jsonl"))
        assert len(pred_files) == 3
        assert run_cli("evaluate", "--dataset", variants / f"{scheme}.test.jsonl",
                       "--predictions", *pred_files,
                       "--out", reports / scheme) == 0

    capsys.readouterr()
    code = run_cli("compare",
                   "--reports-a", *sorted((reports / "OR1").glob("*.json")),
                   "--reports-b", *sorted((reports / "default").glob("*.json")),
                   "--m", "1")
    assert code == 0
    out = capsys.readouterr().out
    assert "OR1+cue vs default+cue" in out

    analysis = tmp_path / "analysis"
    code = run_cli("analyze", "--dataset", variants / "default.test.jsonl",
                   "--preds-a", *sorted((preds / "default").glob("*.jsonl")),
                   "--preds-b", *sorted((preds / "OR1").glob("*.jsonl")),
                   "--out", analysis)
    assert code == 0
    assert (analysis / "margins.tsv").exists()
    assert (analysis / "connectives.tsv").exists()
    margins = (analysis / "margins.tsv").read_text(encoding="utf-8")
    assert "winning" in margins


def test_experiment_end_to_end(small_corpus_dir, tmp_path, capsys):
    config = experiment_config(tmp_path, small_corpus_dir,
                               backends=[{"kind": "cue"}], m=1)
    assert run_cli("experiment", "--config", config) == 0
    out_dir = tmp_path / "out"
    table = (out_dir / "results_table.txt").read_text(encoding="utf-8")
    assert "default+cue" in table and "OR1+cue" in table
    assert "†" in table  # the improvement is significant on this fixture
    sig = (out_dir / "significance.tsv").read_text(encoding="utf-8")
    assert "OR1+cue" in sig and "True" in sig
    assert (out_dir / "analysis" / "cue.default-vs-OR1" / "margins.tsv").exists()
    assert (out_dir / "manifest.json").exists()
    stdout = capsys.readouterr().out
    assert "mean macro-F1" in stdout


def test_experiment_rerun_is_idempotent(small_corpus_dir, tmp_path):
    config = experiment_config(tmp_path, small_corpus_dir,
                               backends=[{"kind": "majority"}, {"kind": "cue"}],
                               m=2, seeds=[1, 2, 3])
    assert run_cli("experiment", "--config", config) == 0
    out_dir = tmp_path / "out"
    snapshot = {
        p: p.read_bytes()
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    assert run_cli("experiment", "--config", config) == 0
    for path, content in snapshot.items():
        assert path.read_bytes() == content, f"{path} changed on rerun"
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    reused = [s for s in manifest["stages"].values() if s.get("reused")]
    assert reused, "second run should reuse completed stages"


def test_experiment_import_backend(small_corpus_dir, tmp_path):
    # first produce prediction files with the cue baseline
    config = experiment_config(tmp_path, small_corpus_dir,
                               backends=[{"kind": "cue"}], seeds=[1, 2], m=1)
    assert run_cli("experiment", "--config", config) == 0
    pred_dir = tmp_path / "out" / "predictions"
    runs = {
        "default": [str(pred_dir / "default+cue.run1.jsonl"),
                    str(pred_dir / "default+cue.run2.jsonl")],
        "OR1": [str(pred_dir / "OR1+cue.run1.jsonl"),
                str(pred_dir / "OR1+cue.run2.jsonl")],
    }
    config2 = {
        "schema_version": 1,
        "corpus": {"name": "disamb", "dir": str(small_corpus_dir)},
        "schemes": ["default", "OR1"],
        "backends": [{"kind": "import", "tag": "plm", "runs": runs}],
        "seeds": [1, 2],
        "bonferroni_m": 1,
        "alpha": 0.05,
        "out_dir": str(tmp_path / "out2"),
    }
    config2_path = tmp_path / "import.json"
    config2_path.write_text(json.dumps(config2), encoding="utf-8")
    assert run_cli("experiment", "--config", config2_path) == 0
    table = (tmp_path / "out2" / "results_table.txt").read_text(encoding="utf-8")
    assert "default+plm" in table and "OR1+plm" in table


def test_experiment_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{\"schema_version\": 99}", encoding="utf-8")
    assert run_cli("experiment", "--config", path) == 2
    assert "config error" in capsys.readouterr().err


def test_experiment_missing_bonferroni_m_exits_2(small_corpus_dir, tmp_path,
                                                 capsys):
    config = {
        "schema_version": 1,
        "corpus": {"name": "disamb", "dir": str(small_corpus_dir)},
        "schemes": ["default", "OR1"],
        "backends": [{"kind": "majority"}],
        "seeds": [1],
        "out_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "no_m.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    assert run_cli("experiment", "--config", path) == 2
    assert "bonferroni_m" in capsys.readouterr().err


def test_experiment_unreachable_endpoint_exits_3(small_corpus_dir, tmp_path,
                                                 capsys):
    config = experiment_config(
        tmp_path, small_corpus_dir, seeds=[1], m=1,
        backends=[{"kind": "endpoint", "base_url": "http://127.0.0.1:9",
                   "model": "m", "max_retries": 0, "backoff": 0.001}])
    assert run_cli("experiment", "--config", config) == 3
    assert "endpoint error" in capsys.readouterr().err


def test_data_error_exits_1(tmp_path, capsys):
    assert run_cli("validate", tmp_path / "nowhere") == 1
    assert "error" in capsys.readouterr().err
