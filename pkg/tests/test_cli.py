"""End-to-end CLI runs in a temp directory."""

import json

import numpy as np
import pytest

from patchformer.cli import main
from patchformer.segio import load_segments

TOY_MODEL = ["--k", "4", "--lt", "4", "--lstep", "2", "--ltoken", "8",
             "--nhead", "2", "--layers", "1", "--dropout", "0.1",
             "--graphs", "0,1;2,3"]
TOY_TRAIN = ["--epochs", "1", "--batch-size", "8", "--seed", "3"]


def synth_args(path, **overrides):
    args = {"subjects": 2, "per-class": 6, "channels": 4, "length": 64,
            "fs": 16, "seed": 7, "amplitude": 2, "freq": 4}
    args.update(overrides)
    flat = ["synth", "--out", str(path)]
    for key, value in args.items():
        flat += [f"--{key}", str(value)]
    return flat


@pytest.fixture
def toy_seg(tmp_path):
    path = tmp_path / "toy.seg"
    assert main(synth_args(path)) == 0
    return path


class TestSynth:
    def test_counts_and_manifest(self, tmp_path):
        out = tmp_path / "d.seg"
        assert main(synth_args(out, subjects=6, **{"per-class": 40})) == 0
        assert load_segments(out).n == 480
        manifest = json.loads((tmp_path / "d.seg.manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 7
        assert "timestamp" in manifest and "tool_version" in manifest

    def test_same_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a.seg", tmp_path / "b.seg"
        main(synth_args(a))
        main(synth_args(b))
        assert a.read_bytes() == b.read_bytes()

    def test_null_amplitude_flagged(self, tmp_path):
        out = tmp_path / "null.seg"
        main(synth_args(out, amplitude=0))
        assert load_segments(out).metadata["null_effect"] is True

    def test_rerun_reproduces(self, tmp_path):
        out = tmp_path / "a.seg"
        main(synth_args(out))
        other = tmp_path / "b.seg"
        assert main(["rerun", str(tmp_path / "a.seg.manifest.json"),
                     "--out", str(other)]) == 0
        assert out.read_bytes() == other.read_bytes()


class TestPreprocess:
    def test_csv_pipeline(self, tmp_path):
        csv_path = tmp_path / "rec.csv"
        rows = ["A,B"] + [f"{i},{i + 1}" for i in range(48)]
        csv_path.write_text("\n".join(rows) + "\n")
        out = tmp_path / "p.seg"
        code = main(["preprocess", "--input", str(csv_path), "--out", str(out),
                     "--fs", "8", "--target-fs", "4", "--win", "2", "--overlap",
                     "0.5", "--keep", "6", "--subject", "P1", "--label", "0"])
        assert code == 0
        ds = load_segments(out)
        # 48 samples at 8 Hz -> 24 at 4 Hz, keep 6 s = 24; windows of 8 step 4 -> 5
        assert ds.n == 5 and ds.l == 8 and ds.f_s == 4.0
        assert (ds.y == 0).all()

    def test_bad_magic_is_format_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.seg"
        bad.write_bytes(b"WRONG!!!" + b"\x00" * 64)
        code = main(["preprocess", "--input", str(bad), "--out", str(tmp_path / "o.seg")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "DataFormatError"
        assert "offset 0" in err["message"]

    def test_segment_file_revalidated(self, toy_seg, tmp_path):
        out = tmp_path / "copy.seg"
        assert main(["preprocess", "--input", str(toy_seg), "--out", str(out)]) == 0
        assert load_segments(out).n == load_segments(toy_seg).n


class TestRuns:
    def test_loso_writes_reports(self, toy_seg, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["loso", "--data", str(toy_seg), "--out", str(out), "--quiet",
                     *TOY_MODEL, *TOY_TRAIN])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["rows"]) == 2
        assert (out / "report.csv").exists()
        assert (out / "manifest.json").exists()
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["S01.ckpt", "S02.ckpt"]
        last = capsys.readouterr().out.strip().splitlines()[-1]
        assert json.loads(last)["event"] == "loso_done"

    def test_loso_reports_reproduce(self, toy_seg, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["loso", "--data", str(toy_seg), "--out", str(out), "--quiet",
                         *TOY_MODEL, *TOY_TRAIN]) == 0
        assert (out_a / "report.json").read_text() == (out_b / "report.json").read_text()
        assert (out_a / "report.csv").read_text() == (out_b / "report.csv").read_text()

    def test_train_then_eval(self, toy_seg, tmp_path, capsys):
        out = tmp_path / "fold"
        assert main(["train", "--data", str(toy_seg), "--out", str(out),
                     "--test-subject", "S01", "--quiet", *TOY_MODEL, *TOY_TRAIN]) == 0
        test_line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert test_line["event"] == "test"
        assert (out / "checkpoint.ckpt").exists() and (out / "history.json").exists()

        assert main(["eval", "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--data", str(toy_seg), "--subject", "S01"]) == 0
        eval_line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert eval_line["acc"] == pytest.approx(test_line["acc"])

    def test_train_epoch_logs_are_json(self, toy_seg, tmp_path, capsys):
        out = tmp_path / "fold"
        assert main(["train", "--data", str(toy_seg), "--out", str(out),
                     "--test-subject", "S01", *TOY_MODEL, *TOY_TRAIN]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        epochs = [l for l in lines if "train_loss" in l]
        assert len(epochs) == 1 and set(epochs[0]) >= {"epoch", "lr", "val_acc"}

    def test_ablate_and_sweep(self, toy_seg, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", "--data", str(toy_seg), "--out", str(out),
                     "--variant", "no_overlap", "--quiet", *TOY_MODEL, *TOY_TRAIN]) == 0
        assert json.loads((out / "report.json").read_text())["label"] == "no_overlap"

        out2 = tmp_path / "sw"
        assert main(["sweep", "--data", str(toy_seg), "--out", str(out2),
                     "--lengths", "2,4", "--quiet", *TOY_MODEL, *TOY_TRAIN]) == 0
        table = (out2 / "sweep.csv").read_text().strip().splitlines()
        assert len(table) == 3

    def test_invalid_train_config_rejected_before_manifest(self, toy_seg, tmp_path):
        out = tmp_path / "willfail"
        code = main(["loso", "--data", str(toy_seg), "--out", str(out), "--quiet",
                     *TOY_MODEL, "--epochs", "0"])
        assert code == 1
        assert not (out / "manifest.json").exists()

    def test_print_config_runs_nothing(self, toy_seg, tmp_path, capsys):
        out = tmp_path / "nope"
        assert main(["loso", "--data", str(toy_seg), "--out", str(out),
                     "--print-config", *TOY_MODEL, *TOY_TRAIN]) == 0
        config = json.loads(capsys.readouterr().out.strip())
        assert config["model"]["c"] == 4 and config["train"]["epochs"] == 1
        assert not out.exists()

    def test_config_violation_reported_before_training(self, toy_seg, tmp_path, capsys):
        code = main(["loso", "--data", str(toy_seg), "--out", str(tmp_path / "x"),
                     "--quiet", "--k", "4", "--lt", "200", *TOY_TRAIN])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConfigurationError"


class TestGradcheckCommand:
    def test_ops_mode(self, capsys):
        assert main(["gradcheck", "--mode", "ops", "--trials", "2"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert lines[-1]["event"] == "gradcheck_done" and lines[-1]["ok"] is True
        assert all(l.get("ok", True) for l in lines)


class TestSeedEnvVar:
    def test_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PATCHFORMER_SEED", "99")
        out = tmp_path / "env.seg"
        args = [a for a in synth_args(out) if a != "7"]
        args = [a for a in args if a != "--seed"]
        assert main(args) == 0
        manifest = json.loads((tmp_path / "env.seg.manifest.json").read_text())
        assert manifest["seed"] == 99
