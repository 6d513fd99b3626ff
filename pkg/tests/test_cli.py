"""CLI commands, config validation, artifact layout, manifest replay."""

import json
import subprocess
import sys

import numpy as np
import pytest

from mixreg.cli import main
from mixreg.config import ConfigError, load_config, parse_config
from mixreg.data import load_csv


def base_config(out_dir, **extra):
    doc = {
        "dataset": {
            "kind": "synthetic", "name": "polynomial", "dim": 2, "degree": 1,
            "train_size": 16, "val_size": 8, "test_size": 8, "noise": 0.1, "seed": 3,
            "standardize_features": False,
        },
        "model": {"hidden": [6], "lr": 0.02, "batch_size": 8, "epochs": 15},
        "knn_options": {"kind": "explicit", "values": [0, 1, 2, 4]},
        "mix": {"lambda_mode": "fixed", "lam": 0.5},
        "search": {"samples_per_iter": 3, "max_iters": 2, "patience": 5,
                   "controller_hidden": [8], "controller_input_len": 4,
                   "controller_lr": 0.01},
        "methods": [{"kind": "none"}],
        "out_dir": str(out_dir),
        "seed": 1,
        "workers": 1,
        "n_seeds": 2,
        "figures": False,
    }
    doc.update(extra)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


class TestConfigValidation:
    def test_unknown_top_level_key(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["bogus"] = 1
        with pytest.raises(ConfigError, match="unknown keys.*bogus"):
            parse_config(doc)

    def test_unknown_nested_key_with_path(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["model"]["dropout"] = 0.5
        with pytest.raises(ConfigError, match="config.model.*dropout"):
            parse_config(doc)

    def test_missing_dataset(self):
        with pytest.raises(ConfigError, match="config.dataset"):
            parse_config({"out_dir": "x"})

    def test_csv_requires_split(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["dataset"] = {"kind": "csv", "path": "d.csv", "label_columns": ["y"]}
        with pytest.raises(ConfigError, match="config.split"):
            parse_config(doc)

    def test_per_split_csv_paths(self, tmp_path):
        import numpy as np

        from mixreg.cli import prepare_data
        from mixreg.data import Dataset, write_csv

        rng = np.random.default_rng(0)
        for name, n in (("train", 12), ("val", 6), ("test", 6)):
            ds = Dataset(features=rng.normal(size=(n, 2)), labels=rng.normal(size=(n, 1)),
                         feature_names=["a", "b"], label_names=["y"])
            write_csv(ds, tmp_path / f"{name}.csv")
        doc = base_config(tmp_path / "out")
        doc["dataset"] = {
            "kind": "csv",
            "train_path": str(tmp_path / "train.csv"),
            "val_path": str(tmp_path / "val.csv"),
            "test_path": str(tmp_path / "test.csv"),
            "label_columns": ["y"],
            "standardize_features": False,
        }
        cfg = parse_config(doc)
        train, val, test = prepare_data(cfg)
        assert (train.n, val.n, test.n) == (12, 6, 6)

    def test_csv_without_any_path(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["dataset"] = {"kind": "csv", "label_columns": ["y"]}
        with pytest.raises(ConfigError, match="train_path"):
            parse_config(doc)

    def test_bad_method_kind(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["methods"] = [{"kind": "vae"}]
        with pytest.raises(ConfigError, match=r"methods\[0\].kind"):
            parse_config(doc)

    def test_overrides(self, tmp_path):
        path = write_config(tmp_path, base_config(tmp_path / "out"))
        cfg = load_config(path, {"seed": 42, "out_dir": "elsewhere"})
        assert cfg.seed == 42
        assert cfg.out_dir == "elsewhere"

    def test_missing_config_file_before_compute(self, tmp_path):
        rc = main(["search", "--config", str(tmp_path / "nope.json")])
        assert rc == 1


class TestGenSynthetic:
    def test_writes_dataset_and_metadata(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["gen-synthetic", "--config", str(path)]) == 0
        data = load_csv(out / "dataset.csv", ["y0"])
        assert data.n == 16 + 8 + 8
        meta = json.loads((out / "dataset.meta.json").read_text())
        assert len(meta["splits"]["train"]) == 16

    def test_rejects_csv_config(self, tmp_path):
        doc = base_config(tmp_path / "out")
        doc["dataset"] = {"kind": "csv", "path": "d.csv", "label_columns": ["y"]}
        doc["split"] = {"train_size": 1, "val_size": 1, "test_size": 1}
        path = write_config(tmp_path, doc)
        assert main(["gen-synthetic", "--config", str(path)]) == 1


class TestSearchCommand:
    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["search", "--config", str(path)]) == 0
        for name in ("policy.csv", "reward_trace.csv", "controller.json",
                     "manifest.json"):
            assert (out / name).exists(), name
        policy_lines = (out / "policy.csv").read_text().strip().splitlines()
        assert len(policy_lines) == 1 + 16  # header + one row per example

    def test_manifest_replay_reproduces_policy(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        path = write_config(tmp_path, base_config(out1))
        assert main(["search", "--config", str(path)]) == 0
        assert main(["search", "--config", str(out1 / "manifest.json"),
                     "--out", str(out2)]) == 0
        assert (out1 / "policy.csv").read_bytes() == (out2 / "policy.csv").read_bytes()
        assert (out1 / "reward_trace.csv").read_bytes() == \
            (out2 / "reward_trace.csv").read_bytes()

    def test_figures_rendered_when_enabled(self, tmp_path):
        out = tmp_path / "out"
        doc = base_config(out, figures=True)
        path = write_config(tmp_path, doc)
        assert main(["search", "--config", str(path)]) == 0
        assert (out / "figures" / "reward_trace.png").exists()
        assert (out / "figures" / "policy_histogram.png").exists()


class TestCompareCommand:
    def test_single_method_table(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["compare", "--config", str(path)]) == 0
        text = (out / "results.txt").read_text()
        assert "none" in text
        results = json.loads((out / "results.json").read_text())
        assert len(results["results"]) == 1
        # text and JSON agree numerically
        row = results["results"][0]
        assert f"{row['rmse_mean']:.4f}" in text

    def test_all_methods_run(self, tmp_path):
        out = tmp_path / "out"
        doc = base_config(out)
        doc["methods"] = [
            {"kind": "none"},
            {"kind": "mixup", "alpha": 1.0},
            {"kind": "manifold_mixup", "eligible_layers": [0, 1]},
            {"kind": "global_knn", "budget": 3},
            {"kind": "knn_policy"},
            {"kind": "knn_policy_manifold", "eligible_layers": [0]},
        ]
        path = write_config(tmp_path, doc)
        assert main(["compare", "--config", str(path)]) == 0
        results = json.loads((out / "results.json").read_text())
        assert [r["method"] for r in results["results"]] == [
            "none", "mixup", "manifold_mixup", "global_knn",
            "knn_policy", "knn_policy_manifold",
        ]
        assert all("error" not in r for r in results["results"])
        assert (out / "model.json").exists()
        assert (out / "policy.csv").exists()  # written by the searched method

    def test_method_failure_recorded_others_continue(self, tmp_path):
        out = tmp_path / "out"
        doc = base_config(out)
        # a policy path that does not exist makes the policy method fail
        doc["methods"] = [{"kind": "none"},
                          {"kind": "knn_policy", "policy_path": "missing.csv"}]
        path = write_config(tmp_path, doc)
        assert main(["compare", "--config", str(path)]) == 2
        results = json.loads((out / "results.json").read_text())
        assert "error" not in results["results"][0]
        assert "error" in results["results"][1]

    def test_method_filter(self, tmp_path):
        out = tmp_path / "out"
        doc = base_config(out)
        doc["methods"] = [{"kind": "none"}, {"kind": "mixup"}]
        path = write_config(tmp_path, doc)
        assert main(["compare", "--config", str(path), "--method", "mixup"]) == 0
        results = json.loads((out / "results.json").read_text())
        assert [r["method"] for r in results["results"]] == ["mixup"]


class TestAugmentCommand:
    def run_search_then_augment(self, tmp_path, zero_policy=False):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["search", "--config", str(path)]) == 0
        policy_path = out / "policy.csv"
        if zero_policy:
            lines = policy_path.read_text().strip().splitlines()
            rows = ["example_id,chosen_k,probability"]
            for line in lines[1:]:
                i = line.split(",")[0]
                rows.append(f"{i},0,1.0")
            policy_path = tmp_path / "zero_policy.csv"
            policy_path.write_text("\n".join(rows) + "\n")
        out2 = tmp_path / "aug"
        assert main(["augment", "--config", str(path), "--out", str(out2),
                     "--policy", str(policy_path)]) == 0
        return out2, policy_path

    def test_zero_policy_returns_originals(self, tmp_path):
        out, _ = self.run_search_then_augment(tmp_path, zero_policy=True)
        data = load_csv(out / "augmented.csv", ["y0"])
        assert data.n == 16

    def test_row_count_and_round_trip(self, tmp_path):
        out, policy_path = self.run_search_then_augment(tmp_path)
        ks = [int(line.split(",")[1])
              for line in policy_path.read_text().strip().splitlines()[1:]]
        data = load_csv(out / "augmented.csv", ["y0"])
        assert data.n == 16 + sum(ks)
        assert data.provenance is not None

    def test_size_mismatch_rejected(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        bad = tmp_path / "bad_policy.csv"
        bad.write_text("example_id,chosen_k,probability\n0,0,1.0\n")
        assert main(["augment", "--config", str(path), "--policy", str(bad)]) == 1


class TestAnalyzeCommand:
    def test_band_study_csv_rows(self, tmp_path):
        out = tmp_path / "out"
        doc = base_config(out)
        doc["analyze"] = {"bands": [[0.0, 0.2], [0.2, 0.4], [0.4, 0.6],
                                    [0.6, 0.8], [0.8, 1.001]],
                          "band_seeds": 2}
        path = write_config(tmp_path, doc)
        assert main(["analyze", "--config", str(path)]) == 0
        lines = (out / "studies" / "distance_band_rmse.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 5

    def test_missing_model_checkpoint_instructs_to_train(self, tmp_path, capsys):
        out = tmp_path / "out"
        doc = base_config(out)
        doc["analyze"] = {"bands": [[0.0, 1.001]], "band_seeds": 1,
                          "model_checkpoint": str(tmp_path / "missing-model.json")}
        path = write_config(tmp_path, doc)
        assert main(["analyze", "--config", str(path)]) == 1
        assert "train one first" in capsys.readouterr().err

    def test_label_error_study_with_checkpoint(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["compare", "--config", str(path)]) == 0
        doc = base_config(out)
        doc["analyze"] = {"bands": [[0.0, 0.5], [0.5, 1.001]], "band_seeds": 1,
                          "model_checkpoint": str(out / "model.json")}
        path2 = write_config(tmp_path, doc, "cfg2.json")
        assert main(["analyze", "--config", str(path2)]) == 0
        assert (out / "studies" / "label_error_vs_distance.csv").exists()

    def test_policy_histogram_study(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        assert main(["search", "--config", str(path)]) == 0
        doc = base_config(out)
        doc["analyze"] = {"bands": [[0.0, 1.001]], "band_seeds": 1,
                          "policy_path": str(out / "policy.csv")}
        path2 = write_config(tmp_path, doc, "cfg2.json")
        assert main(["analyze", "--config", str(path2)]) == 0
        lines = (out / "studies" / "policy_histogram.csv").read_text().strip().splitlines()
        assert lines[0] == "k,count"
        counts = [int(line.split(",")[1]) for line in lines[1:]]
        assert sum(counts) == 16


class TestWorkerResolution:
    def test_env_var_supplies_default(self, tmp_path, monkeypatch):
        from mixreg.cli import resolve_workers
        from mixreg.config import parse_config

        cfg = parse_config(base_config(tmp_path / "out"))
        cfg.workers = None
        monkeypatch.setenv("MIXREG_WORKERS", "3")
        assert resolve_workers(cfg) == 3
        monkeypatch.delenv("MIXREG_WORKERS")
        assert resolve_workers(cfg) >= 1
        cfg.workers = 2
        assert resolve_workers(cfg) == 2


class TestConsoleEntry:
    def test_version_runs(self):
        proc = subprocess.run([sys.executable, "-m", "mixreg.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
