import hashlib
import json
import os
from pathlib import Path

import pytest

from boter.cli import main

REPO = Path(__file__).resolve().parent.parent
SMOKE = REPO / "data" / "smoke"


def _dir_digest(path: Path) -> dict:
    return {
        str(p.relative_to(path)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(path.rglob("*")) if p.is_file()
    }


def _smoke_flags(out_dir, extra=()):
    return [
        "--train", str(SMOKE / "train.jsonl"),
        "--test", str(SMOKE / "test.jsonl"),
        "--corpus", str(SMOKE / "corpus.jsonl"),
        "--oracle", str(SMOKE / "oracle.jsonl"),
        "--output-dir", str(out_dir),
        *extra,
    ]


TRAIN_FLAGS = ["--seed", "11", "--k-candidate", "10", "--k-train", "3", "--k-test", "3",
               "--cycles", "1"]


def test_synth_deterministic(tmp_path):
    args = ["synth", "--seed", "3", "--n-train", "8", "--n-test", "4",
            "--corpus-size", "120", "--planted", "2", "--vocab-size", "12"]
    assert main(args + ["--output-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--output-dir", str(tmp_path / "b")]) == 0
    assert _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")
    for name in ("train.jsonl", "test.jsonl", "corpus.jsonl", "oracle.jsonl"):
        assert (tmp_path / "a" / name).exists()


def test_synth_requires_seed(tmp_path, capsys):
    code = main(["synth", "--output-dir", str(tmp_path)])
    assert code == 4
    err = capsys.readouterr().err
    assert err.startswith("error kind=config") and err.count("\n") == 1


def test_ingest_summary(tmp_path, capsys):
    code = main(["ingest", *_smoke_flags(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "ingest_summary.json").read_text())
    assert summary == {"train_samples": 40, "test_samples": 10, "corpus_documents": 260}


def test_ingest_missing_file_exit_code(tmp_path, capsys):
    code = main(["ingest", "--train", str(tmp_path / "nope.jsonl"),
                 "--output-dir", str(tmp_path)])
    assert code == 3
    assert "missing_file" in capsys.readouterr().err


def test_ingest_nothing_requested(tmp_path):
    assert main(["ingest", "--output-dir", str(tmp_path)]) == 4


def test_ingest_malformed_data_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "s1", "question": "q"}\n')
    code = main(["ingest", "--train", str(bad), "--output-dir", str(tmp_path / "out")])
    assert code == 6
    assert "data_format" in capsys.readouterr().err


def test_index_and_retrieve(tmp_path, capsys):
    assert main(["index", "--corpus", str(SMOKE / "corpus.jsonl"),
                 "--output-dir", str(tmp_path)]) == 0
    index_path = tmp_path / "index.bin"
    assert index_path.exists()
    capsys.readouterr()
    code = main(["retrieve", "--index", str(index_path),
                 "--query", "which answer goes with alpha000 beta000", "--k", "4"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    scores = [float(line.split("\t")[1]) for line in lines]
    assert scores == sorted(scores, reverse=True)


def test_train_cycle_layout_and_immutability(tmp_path, capsys):
    before = {name: hashlib.sha256((SMOKE / name).read_bytes()).hexdigest()
              for name in ("train.jsonl", "test.jsonl", "corpus.jsonl", "oracle.jsonl")}
    out = tmp_path / "out"
    code = main(["train", "--mode", "cycle", *_smoke_flags(out, TRAIN_FLAGS)])
    assert code == 0
    after = {name: hashlib.sha256((SMOKE / name).read_bytes()).hexdigest()
             for name in before}
    assert before == after
    for cycle in (0, 1):
        for name in ("selector.bin", "answerer.bin", "labels.jsonl", "metrics.json",
                     "selection.jsonl", "predictions.jsonl", "losses.jsonl"):
            assert (out / f"cycle_{cycle}" / name).exists()
    metrics = json.loads((out / "cycle_1" / "metrics.json").read_text())
    assert metrics["mode"] == "cycle"
    assert metrics["cycle"] == 1
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert metrics["recall_at_t"] is not None
    stray = [p for p in tmp_path.rglob("*") if p.is_file() and out not in p.parents]
    assert not stray


def test_train_independent_mode_tag(tmp_path):
    out = tmp_path / "out"
    code = main(["train", "--mode", "independent", *_smoke_flags(out, TRAIN_FLAGS)])
    assert code == 0
    metrics = json.loads((out / "cycle_1" / "metrics.json").read_text())
    assert metrics["mode"] == "independent"
    assert [t["phase"] for t in metrics["trace"]] == \
        ["train_answerer", "train_selector", "train_answerer"]


def test_train_twice_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["train", "--mode", "cycle", *_smoke_flags(out, TRAIN_FLAGS)]) == 0
    assert _dir_digest(out_a) == _dir_digest(out_b)


def test_train_requires_seed(tmp_path):
    assert main(["train", *_smoke_flags(tmp_path / "out")]) == 4


def test_config_file_with_flag_override(tmp_path):
    config = {
        "paths": {
            "train": str(SMOKE / "train.jsonl"),
            "test": str(SMOKE / "test.jsonl"),
            "corpus": str(SMOKE / "corpus.jsonl"),
        },
        "seed": 11,
        "cycle": {"k_candidate": 10, "k_train": 3, "k_test": 3, "n_cycles": 2,
                  "selector_train": {"epochs": 1, "learning_rate": 0.5, "warmup_steps": 10},
                  "answerer_train": {"epochs": 1, "learning_rate": 0.3, "warmup_steps": 10}},
    }
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(config))
    out = tmp_path / "out"
    code = main(["train", "--config", str(config_path), "--cycles", "1",
                 "--output-dir", str(out)])
    assert code == 0
    assert (out / "cycle_1").exists() and not (out / "cycle_2").exists()


def test_bad_config_json_exit_code(tmp_path, capsys):
    config_path = tmp_path / "bad.json"
    config_path.write_text("{not json")
    assert main(["train", "--config", str(config_path), "--output-dir", str(tmp_path)]) == 4


def test_unknown_config_key_rejected(tmp_path):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"sed": 1}))
    assert main(["train", "--config", str(config_path), "--output-dir", str(tmp_path)]) == 4


def test_eval_command(tmp_path):
    out = tmp_path / "out"
    assert main(["train", "--mode", "cycle", *_smoke_flags(out, TRAIN_FLAGS)]) == 0
    eval_out = tmp_path / "eval"
    code = main([
        "eval", "--checkpoints", str(out / "cycle_1"),
        "--test", str(SMOKE / "test.jsonl"), "--corpus", str(SMOKE / "corpus.jsonl"),
        "--k-candidate", "10", "--k-test", "3", "--output-dir", str(eval_out),
    ])
    assert code == 0
    report = json.loads((eval_out / "eval_report.json").read_text())
    assert 0.0 <= report["mean_accuracy"] <= 1.0
    assert len(report["per_sample"]) == 10
    train_metrics = json.loads((out / "cycle_1" / "metrics.json").read_text())
    assert report["mean_accuracy"] == pytest.approx(train_metrics["accuracy"])


def test_dimension_mismatch_exit_code(tmp_path, capsys):
    # Query features wider than the reserved passthrough slots cannot be
    # featurized and must surface as the dimension-mismatch exit code.
    wide = tmp_path / "wide.jsonl"
    record = {"id": "s1", "question": "q", "answers": ["a"],
              "query_features": [0.1] * 70}
    wide.write_text(json.dumps(record) + "\n")
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(json.dumps({"id": "d1", "text": "a doc"}) + "\n")
    code = main([
        "train", "--train", str(wide), "--test", str(wide), "--corpus", str(corpus),
        "--seed", "1", "--k-candidate", "1", "--k-train", "1", "--k-test", "1",
        "--cycles", "1", "--output-dir", str(tmp_path / "out"),
    ])
    assert code == 5
    assert "dimension_mismatch" in capsys.readouterr().err


def test_ablate_command(tmp_path):
    out = tmp_path / "out"
    code = main([
        "ablate", *_smoke_flags(out, TRAIN_FLAGS),
        "--selections", "selector,dpr", "--methods", "cycle",
        "--k-settings", "10:3:3",
    ])
    assert code == 0
    rows = [json.loads(line) for line in (out / "results.jsonl").open()]
    assert {r["selection_mode"] for r in rows} == {"selector", "dpr_order"}
    assert (out / "results.tsv").exists() and (out / "series.jsonl").exists()


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("BOTER_OUTPUT_DIR", str(tmp_path / "env-out"))
    code = main(["index", "--corpus", str(SMOKE / "corpus.jsonl")])
    assert code == 0
    assert (tmp_path / "env-out" / "index.bin").exists()


def test_missing_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("BOTER_OUTPUT_DIR", raising=False)
    code = main(["index", "--corpus", str(SMOKE / "corpus.jsonl")])
    assert code == 4


def test_lock_file_blocks_second_writer(tmp_path, capsys):
    out = tmp_path / "out"
    out.mkdir()
    (out / "run.lock").write_text("held")
    code = main(["index", "--corpus", str(SMOKE / "corpus.jsonl"),
                 "--output-dir", str(out)])
    assert code == 7
    assert "locked" in capsys.readouterr().err


def test_lock_released_after_run(tmp_path):
    out = tmp_path / "out"
    assert main(["index", "--corpus", str(SMOKE / "corpus.jsonl"),
                 "--output-dir", str(out)]) == 0
    assert not (out / "run.lock").exists()
    assert main(["index", "--corpus", str(SMOKE / "corpus.jsonl"),
                 "--output-dir", str(out)]) == 0


@pytest.mark.parametrize("command", ["synth", "ingest", "index", "retrieve", "train",
                                     "eval", "ablate"])
def test_help_lists_flags(command, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main([command, "--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    assert "--output-dir" in out
    if command in ("train", "eval", "ablate"):
        assert "--k-candidate" in out and "default" in out


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
