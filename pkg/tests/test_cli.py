import json

import pytest

from tsvalue.cli import main
from tsvalue.config import RunConfig
from tsvalue.errors import ConfigError


def write_config(tmp_path, overrides=None, name="cfg.json"):
    cfg = {
        "dataset": {"synthetic": {"generator": "sine_mix", "length": 300,
                                  "noise_std": 0.05, "seed": 1}},
        "valuation": {"block_length": 20, "stride": 4, "k_folds": 3,
                      "learning_rate": 0.01},
        "model": {"architecture": "linear_ar", "horizon": 2},
        "pretrain": {"epochs": 5, "batch_size": 16, "learning_rate": 0.02},
        "finetune": {"epochs": 2, "batch_size": 8},
        "selection": {"ratio": 0.5},
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
    }
    for key, value in (overrides or {}).items():
        if key != "dataset" and isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


class TestConfig:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"surprise": 1})
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"valuation": {"blok_length": 10}})
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_dataset_requires_exactly_one_source(self, tmp_path):
        path = write_config(tmp_path, {"dataset": {}})
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_hash_changes_with_content(self, tmp_path):
        a = RunConfig.load(write_config(tmp_path, name="a.json"))
        b = RunConfig.load(write_config(tmp_path, {"seed": 4}, name="b.json"))
        assert a.config_hash != b.config_hash

    def test_overrides_feed_hash(self, tmp_path):
        path = write_config(tmp_path)
        a = RunConfig.load(path)
        b = RunConfig.load(path, seed=99)
        assert a.config_hash != b.config_hash


class TestSynth:
    def test_writes_csv_with_header(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["synth", "--config", str(path)]) == 0
        lines = (tmp_path / "out" / "dataset.csv").read_text().splitlines()
        assert lines[0].startswith("# version=")
        assert lines[1] == "ch0"
        assert len(lines) == 302

    def test_output_loads_back_through_ingestion(self, tmp_path):
        path = write_config(tmp_path)
        main(["synth", "--config", str(path)])
        csv_path = tmp_path / "out" / "dataset.csv"
        reloaded_cfg = write_config(tmp_path, {"dataset": {"path": str(csv_path)}},
                                    name="fromfile.json")
        out2 = tmp_path / "out2"
        assert main(["value", "--config", str(reloaded_cfg),
                     "--out", str(out2)]) == 0

    def test_deterministic(self, tmp_path):
        path = write_config(tmp_path)
        main(["synth", "--config", str(path)])
        first = (tmp_path / "out" / "dataset.csv").read_bytes()
        main(["synth", "--config", str(path)])
        assert (tmp_path / "out" / "dataset.csv").read_bytes() == first


class TestValue:
    def test_writes_three_score_files(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["value", "--config", str(path)]) == 0
        out = tmp_path / "out"
        for name in ("blocks.json", "points.json", "samples.json"):
            doc = json.loads((out / name).read_text())
            assert doc["version"] and doc["config_hash"]

    def test_block_count_arithmetic(self, tmp_path):
        # T=300, test_fraction 0.3 -> target 210; L=20 stride 4 -> 48 blocks
        path = write_config(tmp_path)
        main(["value", "--config", str(path)])
        doc = json.loads((tmp_path / "out" / "blocks.json").read_text())
        assert len(doc["blocks"]) == (210 - 20) // 4 + 1

    def test_default_pipeline_block_count(self, tmp_path):
        # T=800 with the stock 30% holdout and L=100 stride 1:
        # target ceil(800*0.7)=560, blocks 560-100+1=461
        cfg = {
            "dataset": {"synthetic": {"generator": "sine_mix", "length": 800,
                                      "noise_std": 0.1, "seed": 0}},
            "pretrain": {"epochs": 3, "batch_size": 32, "learning_rate": 0.02},
            "output_dir": str(tmp_path / "out800"),
        }
        path = tmp_path / "default.json"
        path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["value", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "out800" / "blocks.json").read_text())
        assert len(doc["blocks"]) == 461
        points = json.loads((tmp_path / "out800" / "points.json").read_text())
        assert len(points["points"]) == 560
        samples = json.loads((tmp_path / "out800" / "samples.json").read_text())
        assert len(samples["samples"]) == 5  # 560 // 100

    def test_diverging_training_exits_3(self, tmp_path, capsys):
        path = write_config(tmp_path, {
            "pretrain": {"epochs": 50, "batch_size": 8, "learning_rate": 1e9,
                         "optimizer_kind": "sgd"}})
        assert main(["value", "--config", str(path)]) == 3
        assert "exit=3" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path):
        path = write_config(tmp_path)
        main(["value", "--config", str(path)])
        out = tmp_path / "out"
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        main(["value", "--config", str(path)])
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_block_longer_than_target_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, {"valuation": {"block_length": 500}})
        assert main(["value", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "exit=2" in err and "kind=" in err

    def test_loads_checkpoint_instead_of_training(self, tmp_path):
        path = write_config(tmp_path)
        main(["value", "--config", str(path)])
        ckpt = tmp_path / "out" / "value_model.json"
        path2 = write_config(tmp_path, {"model": {"architecture": "linear_ar",
                                                  "horizon": 2,
                                                  "checkpoint": str(ckpt)}},
                             name="cfg2.json")
        out2 = tmp_path / "out2"
        assert main(["value", "--config", str(path2), "--out", str(out2)]) == 0
        a = json.loads((tmp_path / "out" / "blocks.json").read_text())["blocks"]
        b = json.loads((out2 / "blocks.json").read_text())["blocks"]
        assert a == b

    def test_detection_report_when_corrupted(self, tmp_path):
        path = write_config(tmp_path, {
            "corruption": {"fraction": 0.2, "magnitude": 0.2, "seed": 5},
            "valuation": {"block_length": 20, "stride": 20, "k_folds": 3,
                          "learning_rate": 0.05},
        })
        assert main(["value", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "out" / "detection.json").read_text())
        assert 0.0 <= doc["auroc"] <= 1.0


class TestSelectEval:
    def test_four_row_report(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["select-eval", "--config", str(path)]) == 0
        lines = (tmp_path / "out" / "select_eval.csv").read_text().splitlines()
        assert lines[0].startswith("# version=")
        assert lines[1].split(",")[0] == "strategy"
        strategies = [line.split(",")[0] for line in lines[2:]]
        assert strategies == ["top", "bottom", "random", "full"]

    def test_wall_time_only_in_sidecar(self, tmp_path):
        path = write_config(tmp_path)
        main(["select-eval", "--config", str(path)])
        main_csv = (tmp_path / "out" / "select_eval.csv").read_text()
        assert "wall_time" not in main_csv
        sidecar = (tmp_path / "out" / "select_eval_timings.csv").read_text()
        assert "wall_time_s" in sidecar

    def test_main_report_byte_identical_across_runs(self, tmp_path):
        path = write_config(tmp_path)
        main(["select-eval", "--config", str(path)])
        first = (tmp_path / "out" / "select_eval.csv").read_bytes()
        main(["select-eval", "--config", str(path)])
        assert (tmp_path / "out" / "select_eval.csv").read_bytes() == first


class TestOracleCompare:
    def test_single_method_gives_unit_matrix(self, tmp_path):
        path = write_config(tmp_path, {
            "oracle_compare": {"methods": ["one_step"], "max_blocks": 10,
                               "context_cap": 10}})
        assert main(["oracle-compare", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "out" / "oracle_compare.json").read_text())
        assert doc["methods"] == ["one_step"]
        assert doc["spearman"]["one_step"]["one_step"] == 1.0

    def test_enumeration_cap_exits_1(self, tmp_path, capsys):
        path = write_config(tmp_path, {
            "oracle_compare": {"methods": ["shapley"], "max_blocks": 10,
                               "context_cap": 10, "shapley_mode": "enumerate"}})
        assert main(["oracle-compare", "--config", str(path)]) == 1
        assert "exit=1" in capsys.readouterr().err

    def test_matrix_covers_all_methods(self, tmp_path):
        path = write_config(tmp_path, {
            "oracle_compare": {"methods": ["one_step", "grad_inner",
                                           "exact_influence"],
                               "max_blocks": 8, "context_cap": 8}})
        assert main(["oracle-compare", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "out" / "oracle_compare.json").read_text())
        for a in doc["methods"]:
            for b in doc["methods"]:
                assert -1.0 <= doc["spearman"][a][b] <= 1.0


class TestOtherCommands:
    def test_ablate_table_shape(self, tmp_path):
        path = write_config(tmp_path, {
            "ablation": {"block_lengths": [16, 20], "ratio": 0.25,
                         "strategies": ["top", "bottom"]}})
        assert main(["ablate", "--config", str(path)]) == 0
        table = (tmp_path / "out" / "ablation_table.csv").read_text().splitlines()
        header = table[1].split(",")
        assert header == ["strategy", "mse@L16", "mae@L16", "mse@L20", "mae@L20"]
        assert [r.split(",")[0] for r in table[2:]] == ["top", "bottom"]

    def test_generalize_rows(self, tmp_path):
        path = write_config(tmp_path, {
            "downstream_model": {"architecture": "mlp", "horizon": 2,
                                 "hidden": 6},
            "generalize": {"ratios": [0.5], "strategies": ["top", "bottom"]}})
        assert main(["generalize", "--config", str(path)]) == 0
        lines = (tmp_path / "out" / "generalize.csv").read_text().splitlines()
        assert len(lines) == 4  # comment + header + 2 rows

    def test_bench_outputs(self, tmp_path):
        path = write_config(tmp_path, {
            "bench": {"p_list": [300], "methods": ["one_step"], "n_blocks": 8,
                      "n_context": 8, "repeats": 1}})
        assert main(["bench", "--config", str(path)]) == 0
        doc = json.loads((tmp_path / "out" / "bench_slopes.json").read_text())
        assert doc["rows"][0]["method"] == "one_step"

    def test_missing_dataset_file_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, {"dataset": {"path": str(tmp_path / "no.csv")}})
        assert main(["value", "--config", str(path)]) == 2

    def test_bad_config_json_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["value", "--config", str(bad)]) == 1

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        path = write_config(tmp_path)
        env_out = tmp_path / "envout"
        monkeypatch.setenv("TSVALUE_OUT", str(env_out))
        assert main(["synth", "--config", str(path)]) == 0
        assert (env_out / "dataset.csv").exists()
