import json

import pytest

from cogan import cli
from cogan.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, INCOMPLETE, main

TINY_SETS = [
    "epochs=1",
    "steps_per_epoch=1",
    "batch_pairs=4",
    "model.embedding_dim=8",
    "model.stem_width=8",
    'model.encoder_widths=[8,8,16,16]',
    'model.encoder_blocks=[1,1,1,1]',
    'model.perceptual_plan=[4,"M",8]',
]


def _sets(*extra):
    out = []
    for s in [*TINY_SETS, *extra]:
        out += ["--set", s]
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth-data", "--out", str(out), "--classes", "6", "--samples", "3", "--seed", "7"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--data", str(dataset), "--out", str(out), *_sets("seed=3")]) == EXIT_OK
    return out


def test_synth_data_is_deterministic(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["synth-data", "--out", str(again), "--classes", "6", "--samples", "3", "--seed", "7"]) == EXIT_OK
    a = json.loads((dataset / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    assert a == b
    for rec in a["records"]:
        assert (dataset / rec["path"]).read_bytes() == (again / rec["path"]).read_bytes()


def test_synth_data_refuses_nonempty_dir(dataset, capsys):
    assert main(["synth-data", "--out", str(dataset), "--classes", "6", "--samples", "3", "--seed", "7"]) == EXIT_INVALID
    assert "overwrite" in capsys.readouterr().err


def test_synth_data_validates_counts(tmp_path):
    assert main(["synth-data", "--out", str(tmp_path / "x"), "--classes", "1", "--seed", "0"]) == EXIT_INVALID


def test_train_writes_run_layout(trained):
    assert not (trained / INCOMPLETE).exists()
    resolved = json.loads((trained / "resolved_config.json").read_text())
    assert resolved["command"] == "train"
    assert resolved["config"]["seed"] == 3 and resolved["config"]["model"]["embedding_dim"] == 8
    assert (trained / "config.json").is_file() and (trained / "history.jsonl").is_file()
    assert (trained / "eval" / "report.json").is_file() and (trained / "eval" / "roc.png").is_file()


def test_resolved_config_reproduces_run(trained, dataset, tmp_path):
    cfg = json.loads((trained / "resolved_config.json").read_text())["config"]
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "rerun"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(dataset), "--out", str(out)]) == EXIT_OK
    assert (out / "history.jsonl").read_bytes() == (trained / "history.jsonl").read_bytes()


def test_seed_is_mandatory(dataset, tmp_path, capsys):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), *_sets()]) == EXIT_INVALID
    assert "seed" in capsys.readouterr().err


def test_unknown_override_names_key(dataset, tmp_path, capsys):
    code = main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), *_sets("seed=1", "weights.lambda_Z=3")])
    assert code == EXIT_INVALID
    assert "weights.lambda_Z" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_partial_config_file(dataset, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 5, "weights": {"lambda_A": 0, "lambda_R": 0, "lambda_P": 0}}))
    out = tmp_path / "r"
    code = main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(dataset), "--out", str(out), "--no-eval", *_sets()])
    assert code == EXIT_OK
    cfg = json.loads((out / "resolved_config.json").read_text())["config"]
    assert cfg["seed"] == 5 and cfg["weights"]["lambda_C"] == 1.0 and cfg["weights"]["lambda_A"] == 0


def test_invalid_value_is_validation_error(dataset, tmp_path):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), *_sets("seed=1", "epochs=0")]) == EXIT_INVALID


def test_missing_manifest(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r"), "--set", "seed=1"]) == EXIT_INVALID


def test_bad_subcommand():
    assert main(["frobnicate"]) == EXIT_INVALID


def test_runtime_failure_marks_incomplete(dataset, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("simulated crash")

    monkeypatch.setattr(cli, "train_and_evaluate", boom)
    out = tmp_path / "r"
    assert main(["train", "--data", str(dataset), "--out", str(out), *_sets("seed=1")]) == EXIT_RUNTIME
    assert "simulated crash" in (out / INCOMPLETE).read_text()
    assert (out / "resolved_config.json").is_file()


def test_evaluate_encoder_only_checkpoint(trained, dataset, tmp_path):
    from cogan.models import strip_to_encoders
    from cogan.training import latest_checkpoint

    enc = strip_to_encoders(latest_checkpoint(trained), tmp_path / "enc")
    out_enc, out_full = tmp_path / "e1", tmp_path / "e2"
    assert main(["evaluate", "--checkpoint", str(enc), "--data", str(dataset), "--out", str(out_enc)]) == EXIT_OK
    assert main(["evaluate", "--checkpoint", str(trained), "--data", str(dataset), "--out", str(out_full)]) == EXIT_OK
    a = json.loads((out_enc / "report.json").read_text())
    b = json.loads((out_full / "report.json").read_text())
    assert a["roc"] == b["roc"] and a["auc"] == b["auc"]
    assert a["auc"] == json.loads((trained / "eval" / "report.json").read_text())["auc"]


def test_evaluate_missing_checkpoint(dataset, tmp_path):
    assert main(["evaluate", "--checkpoint", str(tmp_path), "--data", str(dataset), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_commands_do_not_touch_dataset(dataset, trained, tmp_path):
    before = {p: p.stat().st_mtime_ns for p in dataset.rglob("*")}
    main(["evaluate", "--checkpoint", str(trained), "--data", str(dataset), "--out", str(tmp_path / "o")])
    assert {p: p.stat().st_mtime_ns for p in dataset.rglob("*")} == before


def test_ablate_table4(dataset, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--grid", "table4", "--data", str(dataset), "--out", str(out), *_sets("seed=2")]) == EXIT_OK
    table = json.loads((out / "ablation_table.json").read_text())
    assert len(table["rows"]) == 5
    assert len(list((out / "cells").iterdir())) == 5
    assert "lambda_C lambda_A" in capsys.readouterr().out


def test_ablate_table3_cells(dataset, tmp_path, monkeypatch):
    from cogan import training

    monkeypatch.setattr(training, "_run_cell", lambda job: {"auc": 0.5, "eer": 0.5, "frr_at_far_1pct": 1.0, "frr_at_far_10pct": 0.9})
    out = tmp_path / "abl3"
    assert main(["ablate", "--grid", "table3", "--data", str(dataset), "--out", str(out), "--set", "seed=0"]) == EXIT_OK
    table = json.loads((out / "ablation_table.json").read_text())
    assert len(table["cells"]) == 16 and len(table["auc"]) == 4


def test_ablate_workers_env(dataset, tmp_path, monkeypatch):
    from cogan import training

    seen = {}
    monkeypatch.setenv(training.WORKERS_ENV, "1")
    real = training.run_ablation_grid

    def spy(*a, **kw):
        seen.update(kw)
        return real(*a, **kw)

    monkeypatch.setattr(cli, "run_ablation_grid", spy)
    main(["ablate", "--grid", "table4", "--data", str(dataset), "--out", str(tmp_path / "a"), *_sets("seed=2")])
    assert seen["workers"] is None


def test_report_summarizes_run(trained, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", "--run", str(trained), "--out", str(out)]) == EXIT_OK
    text = (out / "summary.txt").read_text()
    assert "AUC" in text and "epochs 1" in text
    assert (out / "losses.png").is_file()
    assert capsys.readouterr().out.strip() == text.strip()


def test_report_on_empty_dir(tmp_path):
    assert main(["report", "--run", str(tmp_path)]) == EXIT_INVALID
