import json
from pathlib import Path

import pytest

from mncalab.config import (
    ConfigError,
    ExperimentConfig,
    config_as_dict,
    config_digest,
    config_from_dict,
    parse_config,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return p


class TestPresets:
    def test_tissue_preset_values(self):
        cfg = parse_config(CONFIGS / "tissue.yaml")
        assert cfg.variant == "mnca"
        assert cfg.channels == 6
        assert cfg.hidden_dim == 128
        assert cfg.rules == 5
        assert cfg.learning_rate == 1e-3
        assert cfg.epochs == 800
        assert cfg.residual is False
        assert cfg.dropout == 0.0
        assert cfg.milestones == (500,)
        assert cfg.gamma == 0.1
        assert cfg.filters == ("grad_x", "grad_y")
        assert cfg.tissue is not None and cfg.tissue.grid_size == 50

    def test_emoji_preset_values(self):
        cfg = parse_config(CONFIGS / "emoji.yaml")
        assert cfg.channels == 16
        assert cfg.rules == 6
        assert cfg.dropout == 0.1
        assert cfg.milestones == (4000, 6000, 7000)
        assert cfg.gamma == 0.1
        assert cfg.residual is True
        assert cfg.image is not None and cfg.image.pad_px == 6

    def test_microscopy_preset_values(self):
        cfg = parse_config(CONFIGS / "microscopy.yaml")
        assert cfg.channels == 24
        assert cfg.dropout == 0.2
        assert cfg.gamma == 0.2
        assert cfg.milestones == (5000, 6000, 7000)


class TestDefaults:
    def test_minimal_config_fills_defaults(self):
        cfg = config_from_dict({"variant": "nca"})
        assert cfg.channels == 16
        assert cfg.hidden_dim == 128
        assert cfg.rules == 1
        assert cfg.learning_rate == 1e-3
        assert cfg.residual is True
        assert cfg.milestones == ()
        assert cfg.seed is None
        assert cfg.tissue is None and cfg.image is None

    def test_block_defaults(self):
        cfg = config_from_dict({"variant": "mnca", "rules": 3, "tissue": {}})
        assert cfg.tissue.grid_size == 50
        assert cfg.tissue.params == "default"
        assert cfg.tissue.window == 4


class TestRejection:
    def test_missing_variant(self):
        with pytest.raises(ConfigError, match="variant: missing required field"):
            config_from_dict({"channels": 6})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="hidden: unknown key"):
            config_from_dict({"variant": "nca", "hidden": 64})

    def test_unknown_block_key_has_path(self):
        with pytest.raises(ConfigError, match=r"tissue\.grid: unknown key"):
            config_from_dict({"variant": "mnca", "rules": 2, "tissue": {"grid": 9}})

    def test_unknown_key_reports_line(self, tmp_path):
        p = write(tmp_path, "variant: nca\nchannels: 8\nbogus_knob: 3\n")
        with pytest.raises(ConfigError) as err:
            parse_config(p)
        assert err.value.field == "bogus_knob"
        assert err.value.line == 3

    def test_gamma_zero_rejected(self):
        with pytest.raises(ConfigError, match=r"gamma: must lie in \(0, 1\]"):
            config_from_dict({"variant": "nca", "gamma": 0.0})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="channels: expected an integer"):
            config_from_dict({"variant": "nca", "channels": "six"})
        with pytest.raises(ConfigError, match="residual: expected true or false"):
            config_from_dict({"variant": "nca", "residual": 1})
        with pytest.raises(ConfigError, match="milestones: expected a list"):
            config_from_dict({"variant": "nca", "milestones": 500})
        with pytest.raises(ConfigError, match="tissue: expected a mapping"):
            config_from_dict({"variant": "nca", "tissue": "yes"})

    def test_range_errors(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            config_from_dict({"variant": "nca", "learning_rate": 0.0})
        with pytest.raises(ConfigError, match="dropout"):
            config_from_dict({"variant": "nca", "dropout": 1.0})
        with pytest.raises(ConfigError, match="milestones: must be strictly increasing"):
            config_from_dict({"variant": "nca", "milestones": [500, 500]})
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"variant": "nca", "seed": -1})

    def test_variant_rules_coupling(self):
        with pytest.raises(ConfigError, match="rules: variant nca uses exactly one rule"):
            config_from_dict({"variant": "nca", "rules": 5})
        with pytest.raises(ConfigError, match="variant: must be one of"):
            config_from_dict({"variant": "cellular"})

    def test_filters_are_fixed(self):
        with pytest.raises(ConfigError, match="filters"):
            config_from_dict({"variant": "nca", "filters": ["laplacian"]})

    def test_block_range_errors(self):
        with pytest.raises(ConfigError, match=r"abc\.quantile"):
            config_from_dict({"variant": "nca", "abc": {"quantile": 0.0}})
        with pytest.raises(ConfigError, match=r"perturb\.kind"):
            config_from_dict({"variant": "nca", "perturb": {"kind": "flip"}})
        with pytest.raises(ConfigError, match=r"sweep\.rule_counts"):
            config_from_dict({"variant": "nca", "sweep": {"rule_counts": []}})
        with pytest.raises(ConfigError, match=r"tissue\.params"):
            config_from_dict({"variant": "nca", "tissue": {"params": "exotic"}})

    def test_yaml_syntax_error_reports_line(self, tmp_path):
        p = write(tmp_path, "variant: nca\nchannels: [1, 2\n")
        with pytest.raises(ConfigError, match="not valid YAML"):
            parse_config(p)

    def test_non_mapping_root(self, tmp_path):
        p = write(tmp_path, "- just\n- a\n- list\n")
        with pytest.raises(ConfigError, match="root must be a mapping"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config file"):
            parse_config(tmp_path / "absent.yaml")


class TestDigest:
    def test_key_order_does_not_matter(self, tmp_path):
        a = parse_config(write(tmp_path, "variant: nca\nchannels: 8\nseed: 3\n"))
        b = parse_config(write(tmp_path, "seed: 3\nchannels: 8\nvariant: nca\n"))
        assert config_digest(a) == config_digest(b)

    def test_value_changes_move_the_digest(self):
        a = config_from_dict({"variant": "nca", "seed": 3})
        b = config_from_dict({"variant": "nca", "seed": 4})
        assert config_digest(a) != config_digest(b)

    def test_as_dict_is_json_ready(self):
        cfg = config_from_dict({"variant": "mnca", "rules": 4,
                                "milestones": [10, 20], "sweep": {}})
        blob = json.dumps(config_as_dict(cfg), sort_keys=True)
        back = json.loads(blob)
        assert back["milestones"] == [10, 20]
        assert back["sweep"]["rule_counts"] == [1, 2, 5]

    def test_seed_null_round_trips(self):
        cfg = config_from_dict({"variant": "nca", "seed": None})
        assert cfg.seed is None
        assert config_as_dict(cfg)["seed"] is None
