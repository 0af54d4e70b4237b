import json

import numpy as np
import pytest

from mixfed.cli import main
from mixfed.config import config_to_dict, mechanisms, parse_config, preset
from mixfed.errors import ConfigError


class TestParseConfig:
    def test_empty_file_gives_paper_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        cfg = parse_config(path)
        assert cfg.algo == "mdm"
        assert cfg.rounds == 40 and cfg.local_epochs == 5
        assert cfg.batch_size == 4
        assert cfg.optimizer == "adam" and cfg.learning_rate == 0.0004
        assert cfg.loss.mu == 0.5 and cfg.loss.gamma == 0.0001 and cfg.loss.alpha == 1.0
        assert cfg.memory.capacity == 200 and cfg.memory.centers_per_epoch == 8
        assert cfg.data.scene.height == 32 and cfg.data.train_fraction == 0.7

    def test_no_path_same_as_empty(self):
        assert parse_config(None) == preset("default")

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"algo": "mdm", "rounds": 3}))
        cfg = parse_config(path, {"algo": "fedavg"})
        assert cfg.algo == "fedavg"
        assert cfg.rounds == 3

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"gamm": 0.1}))
        with pytest.raises(ConfigError, match="gamm"):
            parse_config(path)

    def test_nested_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"loss": {"gamm": 0.1}}))
        with pytest.raises(ConfigError, match="loss.*gamm"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.json")

    def test_bad_algo(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"algo": "fedsgd"})

    def test_round_trip_through_dict(self):
        cfg = preset("reference", seed=7)
        from mixfed.config import config_from_dict

        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_data_section(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"data": {"image_size": 16, "samples_per_client": 8, "iid": True}}))
        cfg = parse_config(path)
        assert cfg.data.scene.height == 16
        assert cfg.data.samples_per_client == 8
        assert cfg.data.iid is True


class TestMechanisms:
    def test_mdm_full(self):
        m = mechanisms(preset("default"))
        assert m.group_tailored and m.memory and m.use_cls and m.use_tri and not m.use_prox

    def test_fedavg_disables_everything(self):
        cfg = parse_config(None, {"algo": "fedavg"})
        m = mechanisms(cfg)
        assert not (m.group_tailored or m.memory or m.use_cls or m.use_tri or m.use_prox)

    def test_fedprox_adds_prox(self):
        m = mechanisms(parse_config(None, {"algo": "fedprox"}))
        assert m.use_prox and not m.group_tailored

    def test_single_flags(self, tmp_path):
        for flag, attr in [
            ("no_tailored_updating", "group_tailored"),
            ("no_memory", "memory"),
            ("no_triplet", "use_tri"),
            ("no_cls", "use_cls"),
        ]:
            path = tmp_path / "c.json"
            path.write_text(json.dumps({"ablation": {flag: True}}))
            m = mechanisms(parse_config(path))
            assert getattr(m, attr) is False


def tiny_config_file(tmp_path, **extra):
    raw = {
        "rounds": 1,
        "local_epochs": 1,
        "channels": 4,
        "threads": 1,
        "memory": {"capacity": 20, "centers_per_epoch": 2},
        "data": {
            "image_size": 16,
            "samples_per_client": 6,
            "core_radius": [2.0, 3.5],
            "ring_thickness": [1.0, 2.0],
        },
    }
    raw.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestCLI:
    def test_run_deterministic_files(self, tmp_path, capsys):
        cfg = tiny_config_file(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(a)]) == 0
        assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(b)]) == 0
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_summary_embeds_config_and_seed(self, tmp_path):
        cfg = tiny_config_file(tmp_path)
        out = tmp_path / "out"
        main(["run", "--config", str(cfg), "--seed", "11", "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 11
        assert summary["config"]["data"]["image_size"] == 16
        assert "average_mdice" in summary

    def test_missing_config_exit_2(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"gamm": 1}))
        assert main(["run", "--config", str(path)]) == 2

    def test_env_out_dir_override(self, tmp_path, monkeypatch, capsys):
        cfg = tiny_config_file(tmp_path)
        env_dir = tmp_path / "env_out"
        monkeypatch.setenv("MIXFED_OUT", str(env_dir))
        main(["run", "--config", str(cfg), "--out", str(tmp_path / "ignored")])
        assert (env_dir / "results.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_flag_overrides(self, tmp_path, capsys):
        cfg = tiny_config_file(tmp_path)
        out = tmp_path / "out"
        main(["run", "--config", str(cfg), "--algo", "fedavg", "--rounds", "0", "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["algo"] == "fedavg"
        assert summary["rounds"] == 0

    def test_preset_and_config_exclusive(self, tmp_path, capsys):
        cfg = tiny_config_file(tmp_path)
        assert main(["run", "--config", str(cfg), "--preset", "reference"]) == 2

    def test_ablate_writes_five_rows(self, tmp_path, capsys):
        cfg = tiny_config_file(tmp_path)
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
        lines = (out / "ablation.csv").read_text().strip().splitlines()
        assert len(lines) == 6  # header + 5 variants
        variants = [line.split(",")[0] for line in lines[1:]]
        assert variants == ["full", "no-tailored", "no-memory", "no-triplet", "no-cls"]
        for sub in variants:
            assert (out / sub / "results.csv").exists()

    def test_ablate_resume_identical(self, tmp_path, capsys):
        cfg = tiny_config_file(tmp_path)
        fresh, resumed = tmp_path / "fresh", tmp_path / "resumed"
        main(["ablate", "--config", str(cfg), "--seed", "4", "--out", str(fresh)])
        # first pass: half the variants already done, second pass resumes them
        main(["run", "--config", str(cfg), "--seed", "4", "--out", str(resumed / "full")])
        main(["ablate", "--config", str(cfg), "--seed", "4", "--out", str(resumed), "--resume"])
        assert (fresh / "ablation.csv").read_bytes() == (resumed / "ablation.csv").read_bytes()
