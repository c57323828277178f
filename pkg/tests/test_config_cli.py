import json
import subprocess
import sys

import numpy as np
import pytest

from focusdepth import cli
from focusdepth.config import ConfigError, build_run_config, load_run_config, preset_defaults
from focusdepth.data import read_pfm


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _reason(err):
    lines = [ln for ln in err.splitlines() if ln.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


class TestConfig:
    def test_defaults_follow_preset(self):
        full = build_run_config()
        desk = build_run_config(flags={"preset": "desk"})
        assert full.train.lr == 1e-4 and full.model.feature_channels == 32
        assert full.train.loss.lam == 1.0
        assert desk.train.lr == 1e-3 and desk.model.feature_channels == 8

    def test_flag_beats_file_beats_default(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"lr": 5e-4, "seed": 3, "max_epochs": 7}))
        run = load_run_config(tmp_path / "c.json", {"lr": 2e-4, "seed": None})
        assert run.train.lr == 2e-4
        assert run.train.seed == 3
        assert run.train.max_epochs == 7
        assert run.train.beta1 == 0.9

    def test_file_preset_and_loss_keys(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"preset": "desk", "lambda": 0.5, "augment": True}))
        run = load_run_config(tmp_path / "c.json")
        assert run.train.loss.lam == 0.5 and run.train.augment is not None
        assert run.model.feature_channels == 8

    def test_ablation_switches_reach_model(self):
        run = build_run_config(flags={"focal_path": "plain_gru", "fusion": "weight"})
        assert run.model.focal_path == "plain_gru" and run.model.fusion == "weight"

    @pytest.mark.parametrize("doc", [{"lr": "fast"}, {"unknown_key": 1}, {"batch": 0}, {"preset": "huge"},
                                     {"fusion": "max"}])
    def test_invalid_file_values(self, tmp_path, doc):
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "c.json")

    def test_semantic_errors_become_config_errors(self):
        with pytest.raises(ConfigError):
            build_run_config({"lr": -1.0})

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{nope")
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "c.json")

    def test_preset_defaults_cover_schema(self):
        from focusdepth.config import RUN_CONFIG_SCHEMA
        keys = set(RUN_CONFIG_SCHEMA["properties"]) - {"preset"}
        assert set(preset_defaults("full")) == keys


class TestCliUsage:
    def test_no_subcommand(self, capsys):
        code, _, err = _run([], capsys)
        assert code == 1 and _reason(err)["kind"] == "usage"

    def test_unknown_flag(self, capsys):
        code, _, err = _run(["synth", "--bogus"], capsys)
        assert code == 1 and _reason(err)["exit"] == 1

    def test_bad_log_level(self, capsys, monkeypatch):
        monkeypatch.setenv("FOCUSDEPTH_LOG", "verbose")
        code, _, err = _run(["gradcheck", "--ops", "sigmoid", "--seeds", "1"], capsys)
        assert code == 1 and "FOCUSDEPTH_LOG" in _reason(err)["reason"]

    @pytest.mark.parametrize("level", ["error", "info", "debug", "INFO"])
    def test_log_levels_accepted(self, capsys, monkeypatch, level):
        monkeypatch.setenv("FOCUSDEPTH_LOG", level)
        code, out, _ = _run(["gradcheck", "--ops", "sigmoid", "--seeds", "1"], capsys)
        assert code == 0 and "sigmoid" in out

    def test_eval_needs_one_source(self, tiny_dataset, capsys):
        root, _, _ = tiny_dataset
        code, _, err = _run(["eval", "--manifest", str(root / "test.json")], capsys)
        assert code == 1

    def test_train_needs_manifest(self, capsys, tmp_path):
        code, _, err = _run(["train", "--out", str(tmp_path)], capsys)
        assert code == 1 and "manifest" in _reason(err)["reason"]

    def test_bad_config_is_usage_error(self, capsys, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"lr": "x"}))
        code, _, err = _run(["train", "--config", str(tmp_path / "c.json")], capsys)
        assert code == 1


class TestCliData:
    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = _run(["eval", "--manifest", str(tmp_path / "none.json"), "--baseline"], capsys)
        assert code == 2 and _reason(err)["kind"] == "data"

    def test_not_a_checkpoint(self, tiny_dataset, capsys):
        root, _, _ = tiny_dataset
        code, _, err = _run(["eval", "--manifest", str(root / "test.json"), "--checkpoint",
                             str(root / "train.json")], capsys)
        assert code == 2

    def test_slice_mismatch_config(self, tiny_dataset, capsys, tmp_path):
        root, _, _ = tiny_dataset
        (tmp_path / "c.json").write_text(json.dumps({"num_slices": 6}))
        code, _, err = _run(["train", "--config", str(tmp_path / "c.json"), "--manifest", str(root / "train.json"),
                             "--out", str(tmp_path / "run")], capsys)
        assert code == 2 and "slices" in _reason(err)["reason"]


class TestCliNumerical:
    def test_gradcheck_failure_exits_3(self, capsys, monkeypatch):
        monkeypatch.setattr(cli, "gradcheck_suite", lambda seeds, ops: {ops[0]: 1e-3})
        code, out, err = _run(["gradcheck", "--ops", "tanh"], capsys)
        assert code == 3 and "FAIL" in out and _reason(err)["kind"] == "numerical"

    def test_divergence_exits_3(self, capsys, monkeypatch, tiny_dataset, tmp_path):
        import focusdepth.trainer as tr
        from focusdepth.tensor import NonFiniteError

        def boom(*a, **k):
            raise NonFiniteError("overflow")
        monkeypatch.setattr(tr, "sample_loss", boom)
        root, _, _ = tiny_dataset
        code, _, err = _run(["train", "--preset", "desk", "--manifest", str(root / "train.json"),
                             "--out", str(tmp_path / "r"), "--max-epochs", "1"], capsys)
        assert code == 3 and "diverged" in _reason(err)["reason"]


class TestCliWorkflow:
    def test_synth_train_eval_predict(self, tmp_path, capsys):
        d = tmp_path / "data"
        assert _run(["synth", "--count", "2", "--size", "16", "--slices", "3", "--seed", "1", "--out", str(d)],
                    capsys)[0] == 0
        assert _run(["synth", "--count", "1", "--size", "16", "--slices", "3", "--seed", "2", "--out", str(d),
                     "--split", "test"], capsys)[0] == 0
        run = tmp_path / "run"
        code, out, _ = _run(["train", "--preset", "desk", "--manifest", str(d / "train.json"), "--test-manifest",
                             str(d / "test.json"), "--out", str(run), "--max-epochs", "2", "--lr", "2e-3"], capsys)
        assert code == 0
        records = [json.loads(x) for x in (run / "epochs.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in records] == [0, 1] and records[0]["lr"] == 2e-3

        code, out, _ = _run(["eval", "--manifest", str(d / "test.json"), "--checkpoint", str(run / "checkpoint.bin"),
                             "--json", str(tmp_path / "m.json")], capsys)
        assert code == 0 and out.splitlines()[0].split()[:2] == ["Method", "RMSE"]
        metrics = json.loads((tmp_path / "m.json").read_text())
        assert metrics["rmse"] == pytest.approx(records[-1]["metrics"]["rmse"])

        code, _, _ = _run(["predict", "--checkpoint", str(run / "checkpoint.bin"), "--manifest",
                           str(d / "test.json"), "--scene", "test_0000", "--out", str(tmp_path / "p" / "d.pfm")],
                          capsys)
        assert code == 0
        assert read_pfm(tmp_path / "p" / "d.pfm").shape == (16, 16)
        assert (tmp_path / "p" / "d.png").is_file()

        code, out, _ = _run(["eval", "--manifest", str(d / "test.json"), "--predictions", str(tmp_path / "p")],
                            capsys)
        assert code == 2  # the directory holds d.pfm, not test_0000.pfm

    def test_ablate_tiny(self, tiny_dataset, tmp_path, capsys):
        root, _, _ = tiny_dataset
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"max_epochs": 1, "feature_channels": 2, "rgb_channels": 2,
                                   "fused_channels": 2, "encoder_widths": [2, 2, 2], "rgb_widths": [2, 2, 2, 2]}))
        code, out, _ = _run(["ablate", "--config", str(cfg), "--manifest", str(root / "train.json"),
                             "--test-manifest", str(root / "test.json"), "--seeds", "1", "--out", str(tmp_path)],
                            capsys)
        assert code == 0
        assert "mean-depth baseline" in out and "Concat" in out
        data = json.loads((tmp_path / "ablation.json").read_text())
        assert len(data["arms"]) == 6

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "focusdepth", "gradcheck", "--ops", "exp", "--seeds", "1"],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0 and "exp" in proc.stdout
