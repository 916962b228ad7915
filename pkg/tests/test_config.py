import json

import pytest

from poseadv.config import (
    DEFAULT_EPSILONS,
    OUTPUT_DIR_ENV,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
)
from poseadv.errors import ConfigError


class TestLoadConfig:
    def test_minimal_config_gets_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"sequence": "frames"}))
        cfg = load_config(p)
        assert cfg.sequence == "frames"
        assert cfg.epsilons == DEFAULT_EPSILONS
        assert cfg.alpha == 1.0
        assert cfg.rpe_delta == 1
        assert cfg.loss_weights.lambda_p == 0.85
        assert cfg.attacks == ("untargeted",)
        assert cfg.seed == 0

    def test_missing_sequence(self):
        with pytest.raises(ConfigError, match="sequence"):
            config_from_dict({"seed": 3})

    def test_negative_epsilon(self):
        with pytest.raises(ConfigError, match="epsilons"):
            config_from_dict({"sequence": "x", "epsilons": [1.0, -2.0]})

    def test_empty_epsilons_allowed(self):
        cfg = config_from_dict({"sequence": "x", "epsilons": []})
        assert cfg.epsilons == ()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"sequence": "x", "epsilon": [1]})

    def test_unknown_attack_kind(self):
        with pytest.raises(ConfigError, match="attacks"):
            config_from_dict({"sequence": "x", "attacks": ["invert_roll"]})

    def test_bad_direction(self):
        with pytest.raises(ConfigError, match="direction"):
            config_from_dict({"sequence": "x", "direction": "up"})

    def test_bad_intrinsics(self):
        with pytest.raises(ConfigError, match="intrinsics"):
            config_from_dict({"sequence": "x", "intrinsics": {"fx": 1.0}})
        with pytest.raises(ConfigError, match="intrinsics"):
            config_from_dict({"sequence": "x", "intrinsics":
                              {"fx": -1.0, "fy": 1.0, "cx": 0.0, "cy": 0.0}})

    def test_bad_loss_weights(self):
        with pytest.raises(ConfigError, match="loss_weights"):
            config_from_dict({"sequence": "x", "loss_weights": {"w1": -1.0}})

    def test_bad_integers(self):
        for key in ("seed", "workers", "rpe_delta"):
            with pytest.raises(ConfigError, match=key):
                config_from_dict({"sequence": "x", key: "three"})
        with pytest.raises(ConfigError, match="workers"):
            config_from_dict({"sequence": "x", "workers": 0})

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(p)

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.json")


class TestRoundTrip:
    def test_full_config_round_trips(self, tmp_path):
        raw = {
            "sequence": "seq",
            "groundtruth": "gt.txt",
            "intrinsics": {"fx": 20.0, "fy": 21.0, "cx": 9.5, "cy": 7.5},
            "attacks": ["untargeted", "invert_yaw"],
            "epsilons": [0.5, 2.0],
            "alpha": 0.5,
            "direction": "ascend",
            "loss_weights": {"w1": 2.0, "w2": 0.0, "w3": 1.0, "lambda_p": 0.5},
            "pose_weights": "p.toyw",
            "depth_weights": "d.toyw",
            "seed": 9,
            "output_dir": "out",
            "workers": 2,
            "rpe_delta": 2,
        }
        cfg = config_from_dict(raw)
        p = tmp_path / "cfg.json"
        dump_config(cfg, p)
        assert load_config(p) == cfg

    def test_dict_round_trip_minimal(self):
        cfg = config_from_dict({"sequence": "seq"})
        assert config_from_dict(config_to_dict(cfg)) == cfg


class TestOutputDir:
    def test_explicit_wins(self):
        cfg = config_from_dict({"sequence": "x", "output_dir": "mine"})
        assert cfg.resolved_output_dir() == "mine"

    def test_env_var_default(self, monkeypatch):
        cfg = config_from_dict({"sequence": "x"})
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/envdir")
        assert cfg.resolved_output_dir() == "/tmp/envdir"
        monkeypatch.delenv(OUTPUT_DIR_ENV)
        assert cfg.resolved_output_dir() == "poseadv_out"
