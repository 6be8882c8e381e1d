"""Pipeline commands end to end: artifacts, lineage checks, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from koopmhe.cli import (
    DEFAULT_CONFIG,
    apply_set,
    config_hash,
    data_hash,
    load_config,
    main,
)

# small, fast pipeline on the exact oracle model: zero noise, truth prior
ORACLE_SETS = [
    "lifting.exact_oracle=true",
    "data.train_len=60", "data.val_len=40",
    "data.offline_len=150", "data.online_len=80",
    "data.hold=1", "data.input_noise_scale=0.0",
    "data.state_noise_scale=0.0", "data.output_noise_scale=0.0",
    "data.x0_guess_scale=1.0",
    "mhe.delta_z_bar=0.0", "mhe.delta_y_bar=0.0",
]


def run_cli(args, out, extra_sets=()):
    argv = [args, "--out", str(out)] + sum(
        (["--set", s] for s in [*ORACLE_SETS, *extra_sets]), [])
    return main(argv)


class TestConfigHandling:
    def test_defaults_load(self):
        cfg = load_config(None, [])
        assert cfg["plant"]["name"] == "poly2"
        assert cfg["mhe"]["N"] == 4

    def test_set_parses_json_values(self):
        cfg = json.loads(json.dumps(DEFAULT_CONFIG))
        apply_set(cfg, "mhe.N=7")
        apply_set(cfg, "lifting.psi_hidden=[8,16]")
        apply_set(cfg, "lifting.normalize=false")
        assert cfg["mhe"]["N"] == 7
        assert cfg["lifting"]["psi_hidden"] == [8, 16]
        assert cfg["lifting"]["normalize"] is False

    def test_unknown_key_rejected(self):
        cfg = json.loads(json.dumps(DEFAULT_CONFIG))
        with pytest.raises(Exception):
            apply_set(cfg, "mhe.unknown_thing=1")

    def test_hash_changes_with_config(self):
        a = load_config(None, [])
        b = load_config(None, ["mhe.N=6"])
        assert config_hash(a) != config_hash(b)
        assert data_hash(a) == data_hash(b)  # N is not part of the data scope

    def test_seed_overrides_master(self):
        cfg = load_config(None, [], seed=99)
        assert cfg["seeds"]["master"] == 99

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        rc = main(["simulate", "--out", str(tmp_path),
                   "--set", "plant.name=\"nonexistent\""])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigInvalid"

    def test_config_file_unknown_section(self, tmp_path, capsys):
        bad = tmp_path / "cfg.json"
        bad.write_text(json.dumps({"bogus": 1}))
        rc = main(["simulate", "--config", str(bad), "--out", str(tmp_path)])
        assert rc == 2


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    assert run_cli("simulate", out) == 0
    assert run_cli("train", out) == 0
    assert run_cli("build-stack", out) == 0
    assert run_cli("estimate", out) == 0
    return out


class TestPipeline:
    def test_simulate_artifacts(self, pipeline_dir):
        for name in ("dataset_train.csv", "dataset_val.csv",
                     "dataset_offline.csv", "dataset_online.csv",
                     "dataset_online_truth.csv", "plants_manifest.json"):
            assert (pipeline_dir / name).exists()
        manifest = json.loads((pipeline_dir / "plants_manifest.json").read_text())
        assert [p["name"] for p in manifest["plants"]] == [
            "poly2", "cstr2", "bioreactor3"]

    def test_online_dataset_has_no_states(self, pipeline_dir):
        header = [ln for ln in
                  (pipeline_dir / "dataset_online.csv").read_text().splitlines()
                  if not ln.startswith("#")][0]
        assert "x1" not in header and "y1" in header

    def test_estimate_metrics_oracle_pipeline(self, pipeline_dir):
        metrics = json.loads((pipeline_dir / "metrics.json").read_text())
        assert metrics["rmse_aggregate"] <= 1e-4
        assert metrics["failure_count"] == 0
        assert {"rmse_per_channel", "mean_iterations", "config_hash"} <= set(metrics)

    def test_artifacts_carry_config_hash(self, pipeline_dir):
        cfg = load_config(None, ORACLE_SETS)
        expect = config_hash(cfg)
        model = json.loads((pipeline_dir / "model.json").read_text())
        assert model["config_hash"] == expect
        first = (pipeline_dir / "estimates.csv").read_text().splitlines()[0]
        assert first == f"# config_hash={expect}"

    def test_estimate_refuses_mismatched_stack(self, pipeline_dir, capsys):
        # same artifacts, different horizon: stack lineage must not match
        rc = run_cli("estimate", pipeline_dir, extra_sets=["mhe.N=6"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert "different configuration" in err["message"]

    def test_estimate_requires_artifacts(self, tmp_path, capsys):
        rc = run_cli("estimate", tmp_path)
        assert rc == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "MissingArtifact"

    def test_compare_report_and_plots(self, pipeline_dir):
        assert run_cli("compare", pipeline_dir) == 0
        report = json.loads((pipeline_dir / "compare_report.json").read_text())
        assert report["proposed"]["rmse_aggregate"] <= \
            report["baseline"]["rmse_aggregate"]
        assert report["proposed_beats_baseline"]
        assert (pipeline_dir / "compare_report.md").exists()
        for i in (1, 2):
            assert (pipeline_dir / f"plots/state_{i}.svg").exists()
        md = (pipeline_dir / "compare_report.md").read_text()
        assert "| aggregate RMSE |" in md


class TestDeterminism:
    def test_rerun_byte_identical_csvs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("simulate", out) == 0
            assert run_cli("train", out) == 0
            assert run_cli("build-stack", out) == 0
            assert run_cli("estimate", out) == 0
        for name in ("dataset_train.csv", "dataset_offline.csv",
                     "dataset_online.csv", "history.csv", "estimates.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
        assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()

    def test_same_dir_rerun_identical(self, tmp_path):
        assert run_cli("simulate", tmp_path) == 0
        first = (tmp_path / "dataset_train.csv").read_bytes()
        assert run_cli("simulate", tmp_path) == 0
        assert (tmp_path / "dataset_train.csv").read_bytes() == first


class TestLearnedPipelineSmoke:
    def test_tiny_learned_model_flows_through(self, tmp_path):
        # minimal learned-lifting pipeline (not accuracy, just plumbing)
        sets = [
            "data.train_len=220", "data.val_len=80",
            "data.offline_len=120", "data.online_len=30", "data.hold=5",
            "data.state_noise_scale=0.0", "data.output_noise_scale=0.0",
            "data.input_noise_scale=0.0",
            "lifting.psi_hidden=[8]", "lifting.lam_hidden=[8]",
            "lifting.epochs=3", "lifting.windows_per_batch=8",
            "lifting.batches_per_epoch=2", "lifting.offline_slice=60",
            "lifting.val_windows=16", "lifting.lr=0.001",
            "mhe.max_iter=4000",
        ]
        argv = lambda cmd: [cmd, "--out", str(tmp_path)] + sum(
            (["--set", s] for s in sets), [])
        assert main(argv("simulate")) == 0
        assert main(argv("train")) == 0
        assert main(argv("build-stack")) == 0
        assert main(argv("estimate")) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["steps"] == 31
        history = (tmp_path / "history.csv").read_text().splitlines()
        assert history[1] == "epoch,L1,L2,val_L1,val_L2"
        assert len(history) == 2 + 3
