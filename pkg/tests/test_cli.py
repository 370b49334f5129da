import json

import pytest

from mindread.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, OUTPUT_ENV, main

SMALL_TRAIN = ["--t", "4", "--d-v", "6", "--d", "8", "--d-h", "8", "--n-layers", "1",
               "--heads", "2,2,2", "--batch-size", "32", "--epochs", "1", "--n-records", "30"]


def test_gen_twice_is_identical(tmp_path):
    args = ["gen", "--n", "100", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a.jsonl")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.jsonl")]) == EXIT_OK
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 100


def test_icc_perfect_ratings(tmp_path, capsys):
    path = tmp_path / "perfect.csv"
    path.write_text("r1,r2,r3\n1,1,1\n2,2,2\n4,4,4\n")
    assert main(["icc", "--ratings", str(path)]) == EXIT_OK
    assert float(capsys.readouterr().out.strip()) == pytest.approx(1.0, abs=1e-12)


def test_resolved_config_is_echoed_and_file_overridden(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 5, "seed": 3}))
    assert main(["gen", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "x.jsonl")]) == 0
    echoed = json.loads(capsys.readouterr().err.splitlines()[0])
    assert echoed["command"] == "gen"
    assert echoed["config"]["n"] == 5 and echoed["config"]["seed"] == 4 and echoed["config"]["noise"] == 0.05


def test_unknown_flag_and_config_key(tmp_path):
    assert main(["gen", "--bogus", "1"]) == EXIT_INVALID
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["gen", "--config", str(cfg)]) == EXIT_INVALID
    assert main(["icc"]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID


def test_invalid_corpus_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"pedestrian_id": "p"}\n')
    assert main(["stats", "--corpus", str(path)]) == EXIT_INVALID
    assert "line 1" in capsys.readouterr().err


def test_stats_and_embed(tmp_path, capsys):
    main(["gen", "--n", "50", "--out", str(tmp_path / "c.jsonl")])
    assert main(["stats", "--corpus", str(tmp_path / "c.jsonl"), "--out", str(tmp_path / "s.json")]) == 0
    report = json.loads((tmp_path / "s.json").read_text())
    assert report["records"] == 50 and len(report["adjacency"]) == 17
    assert main(["embed", "--mode", "word", "--d", "16", "--out", str(tmp_path / "e.txt")]) == 0
    assert len((tmp_path / "e.txt").read_text().splitlines()) == 17
    assert main(["embed", "--mode", "glove"]) == EXIT_INVALID


def test_output_dir_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "outputs"))
    assert main(["gen", "--n", "3", "--out", "c.jsonl"]) == EXIT_OK
    assert (tmp_path / "outputs" / "c.jsonl").exists()


def test_train_eval_round_trip(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", *SMALL_TRAIN, "--out-dir", str(run)]) == EXIT_OK
    assert (run / "checkpoint" / "params.bin").exists()
    assert main(["eval", "--checkpoint", str(run / "checkpoint"), "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert set(report["intent"]) == {"accuracy", "f1", "precision", "auc"}


def test_train_divergence_exit_code(tmp_path):
    args = ["train", *SMALL_TRAIN, "--lr", "1e200", "--out-dir", str(tmp_path / "run")]
    with pytest.warns(RuntimeWarning):
        assert main(args) == EXIT_NUMERIC
    assert (tmp_path / "run" / "divergence" / "manifest.json").exists()


def test_train_bad_config_exit_code(tmp_path):
    assert main(["train", "--D", "7", "--out-dir", str(tmp_path)]) == EXIT_INVALID


def test_ablate_and_plot(tmp_path):
    table = tmp_path / "t.json"
    args = ["ablate", *SMALL_TRAIN, "--variants", "full", "--seeds", "0,1,2", "--out", str(table)]
    assert main(args) == EXIT_OK
    assert [r["name"] for r in json.loads(table.read_text())["rows"]] == ["full"]
    assert main(["plot", "--table", str(table), "--out", str(tmp_path / "a.png")]) == EXIT_OK
    assert main(["plot", "--table", str(table), "--out", str(tmp_path / "b.png")]) == EXIT_OK
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert main(["plot", "--table", str(table), "--metric", "nope"]) == EXIT_INVALID


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "3"]) == EXIT_OK
    assert "max relative error" in capsys.readouterr().out
