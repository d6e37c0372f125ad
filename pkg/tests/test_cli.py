import json

import numpy as np
import pytest

from wfdiff.cli import main
from wfdiff.metrics import write_predictions_csv
from wfdiff.training import checkpoint_digest

from conftest import tiny_config


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """A generated dataset plus one trained checkpoint shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    grammar_path = root / "grammar.json"
    from conftest import tiny_grammar

    grammar_path.write_text(json.dumps(tiny_grammar().to_dict()))
    rc = main(
        [
            "gen-synth", "--grammar", str(grammar_path), "--out", str(data),
            "--n-videos", "8", "--seed", "11", "--ratios", "0.5,0.5",
        ]
    )
    assert rc == 0
    cfg_path = root / "train_cfg.json"
    cfg_path.write_text(json.dumps(tiny_config(epochs=1).to_dict()))
    run = root / "run"
    rc = main(["train", "--data", str(data), "--out", str(run), "--config", str(cfg_path)])
    assert rc == 0
    ckpt = next(run.glob("checkpoint-*.pt"))
    return {"root": root, "data": data, "run": run, "cfg": cfg_path, "ckpt": ckpt}


class TestGenSynth:
    def test_writes_layout_and_manifest(self, cli_workspace):
        data = cli_workspace["data"]
        assert (data / "manifest.json").exists()
        assert (data / "meta.txt").exists()
        assert (data / "run_manifest.json").exists()
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["splits"]["train"]) == 4


class TestTrain:
    def test_writes_resolved_config_and_checkpoint(self, cli_workspace):
        run = cli_workspace["run"]
        assert (run / "config.json").exists()
        assert (run / "train_log.jsonl").exists()
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["command"] == "train"
        # the checkpoint artifact carries the config hash in its name
        assert cli_workspace["ckpt"].name == f"checkpoint-{manifest['config_hash'][:8]}.pt"

    def test_same_config_same_digest(self, cli_workspace, tmp_path):
        data, cfg = cli_workspace["data"], cli_workspace["cfg"]
        out2 = tmp_path / "run2"
        rc = main(["train", "--data", str(data), "--out", str(out2), "--config", str(cfg)])
        assert rc == 0
        ckpt2 = next(out2.glob("checkpoint-*.pt"))
        assert checkpoint_digest(ckpt2) == checkpoint_digest(cli_workspace["ckpt"])

    def test_branch_toggle_flags(self, cli_workspace, tmp_path):
        data, cfg = cli_workspace["data"], cli_workspace["cfg"]
        out = tmp_path / "taskonly"
        rc = main(
            ["train", "--data", str(data), "--out", str(out), "--config", str(cfg), "--no-ddpm"]
        )
        assert rc == 0
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["with_ddpm"] is False
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert all(rec["loss_ddpm"] == 0.0 for rec in log if rec["kind"] == "step")

    def test_missing_data_dir_exit_code_3(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_numeric_failure_exit_code_4(self, cli_workspace, tmp_path, monkeypatch):
        import wfdiff.cli as cli_mod
        from wfdiff.training import NonFiniteLossError

        def explode(*args, **kwargs):
            raise NonFiniteLossError("non-finite loss at step 0")

        monkeypatch.setattr(cli_mod, "fit", explode)
        rc = main(
            [
                "train", "--data", str(cli_workspace["data"]),
                "--out", str(tmp_path / "boom"), "--config", str(cli_workspace["cfg"]),
            ]
        )
        assert rc == 4


class TestEval:
    def test_eval_writes_reports_and_predictions(self, cli_workspace, tmp_path):
        out = tmp_path / "eval"
        rc = main(
            [
                "eval", "--checkpoint", str(cli_workspace["ckpt"]),
                "--data", str(cli_workspace["data"]), "--out", str(out), "--timing",
            ]
        )
        assert rc == 0
        report = json.loads(next(out.glob("report-*.json")).read_text())
        assert report["denoiser_invocations"] == 0
        assert report["frames_per_second"] > 0
        assert next(out.glob("report-*.csv")).exists()
        assert any((out / "predictions").iterdir())

    def test_eval_perfect_csv_fixture_gives_zeros(self, tmp_path):
        labels = np.array([[3.0, 0.5, 0.2, 0.0], [3.0, 3.0, 1.0, 0.0]]).T
        csv_path = tmp_path / "perfect.csv"
        write_predictions_csv(csv_path, labels.copy(), labels)
        out = tmp_path / "eval"
        rc = main(
            ["eval", "--from-csv", str(csv_path), "--out", str(out), "--horizons", "3.0"]
        )
        assert rc == 0
        report = json.loads(next(out.glob("report-*.json")).read_text())
        means = report["h=3"]["anticipation"]["means"]
        assert means["wMAE"] == 0.0
        assert means["eMAE"] == 0.0

    def test_unknown_flag_exit_code_2(self):
        with pytest.raises(SystemExit) as err:
            main(["eval", "--bogus", "x"])
        assert err.value.code == 2

    def test_unknown_subcommand_exit_code_2(self):
        with pytest.raises(SystemExit) as err:
            main(["transmogrify"])
        assert err.value.code == 2


class TestSampleAndDiagnose:
    def test_sample_writes_windows(self, cli_workspace, tmp_path):
        data = cli_workspace["data"]
        manifest = json.loads((data / "manifest.json").read_text())
        vid = manifest["splits"]["test"][0]
        out = tmp_path / "sample"
        rc = main(
            [
                "sample", "--checkpoint", str(cli_workspace["ckpt"]),
                "--data", str(data), "--out", str(out), "--video", vid,
                "--steps", "4", "--seeds", "2",
            ]
        )
        assert rc == 0
        windows = np.load(out / f"{vid}_windows.npy")
        assert windows.shape[0] == 2

    def test_diagnose_reports_dispersion_and_gradients(self, cli_workspace, tmp_path):
        out = tmp_path / "diag"
        rc = main(
            [
                "diagnose", "--checkpoint", str(cli_workspace["ckpt"]),
                "--data", str(cli_workspace["data"]), "--out", str(out),
                "--seeds", "2", "--steps", "4",
            ]
        )
        assert rc == 0
        report = json.loads(next(out.glob("diagnostics-*.json")).read_text())
        assert report["dispersion"]["mean_pairwise_distance"] > 0
        assert report["grad_decomposition"]["linearity_gap"] < 1e-8
        vid = report["branch_agreement"]["video"]
        assert next(out.glob(f"{vid}_envelope-*.svg")).exists()


class TestPlot:
    def test_plot_svg_from_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = rng.random((20, 2)) * 3
        preds = np.clip(labels + rng.normal(scale=0.1, size=(20, 2)), 0, 3)
        csv_path = tmp_path / "video.csv"
        write_predictions_csv(csv_path, preds, labels)
        out = tmp_path / "plots"
        rc = main(["plot", "--pred-csv", str(csv_path), "--out", str(out), "--horizon", "3"])
        assert rc == 0
        svg_path = next(out.glob("video-*.svg"))
        assert svg_path.read_text().lstrip().startswith("<?xml")


class TestOutRootEnv:
    def test_relative_out_is_anchored(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WFDIFF_OUT_ROOT", str(tmp_path))
        rng = np.random.default_rng(0)
        labels = rng.random((5, 1))
        csv_path = tmp_path / "p.csv"
        write_predictions_csv(csv_path, labels, labels)
        rc = main(["plot", "--pred-csv", str(csv_path), "--out", "nested/plots", "--horizon", "1"])
        assert rc == 0
        assert next((tmp_path / "nested" / "plots").glob("p-*.svg")).exists()
