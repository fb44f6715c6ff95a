"""Strict config parsing: unknown keys rejected, ranges enforced, round-trip."""

import json

import pytest

from trajsurv.config import (ConfigError, EvalSettings, RunConfig, config_from_dict,
                             config_to_dict, load_config)


class TestDefaults:
    def test_empty_document_yields_defaults(self):
        cfg = config_from_dict({})
        assert cfg.model.backbone == "graphsage"
        assert cfg.model.hidden_dim == 32
        assert cfg.model.time_dim == 16
        assert cfg.model.summary_dim == 32
        assert cfg.model.context_dim == 16
        assert cfg.model.horizon == 12
        assert cfg.model.num_bins == 12
        assert cfg.train.lr == 1e-3
        assert cfg.train.batch_size == 64
        assert cfg.eval.horizons == (1.0, 3.0, 5.0)
        assert cfg.cv.k == 5 and cfg.cv.repeats == 3

    def test_short_model_keys_map_to_dims(self):
        cfg = config_from_dict({"model": {"d": 8, "d_t": 4, "d_h": 8, "d_c": 4,
                                          "T": 3, "K": 6}})
        assert cfg.model.hidden_dim == 8
        assert cfg.model.time_dim == 4
        assert cfg.model.summary_dim == 8
        assert cfg.model.context_dim == 4
        assert cfg.model.horizon == 3
        assert cfg.model.num_bins == 6

    def test_long_model_spellings_rejected(self):
        with pytest.raises(ConfigError, match="unknown key model.hidden_dim"):
            config_from_dict({"model": {"hidden_dim": 8}})


class TestUnknownKeys:
    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown config sections.*optimizer"):
            config_from_dict({"optimizer": {}})

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError, match="unknown key model.x"):
            config_from_dict({"model": {"x": 1}})

    def test_unknown_train_key(self):
        with pytest.raises(ConfigError, match="unknown key train.learning_rate"):
            config_from_dict({"train": {"learning_rate": 0.01}})

    def test_section_must_be_object(self):
        with pytest.raises(ConfigError, match="must be an object"):
            config_from_dict({"train": 3})


class TestValidation:
    def test_bad_backbone(self):
        with pytest.raises(ConfigError, match="model.backbone"):
            config_from_dict({"model": {"backbone": "transformer"}})

    def test_bad_integrator(self):
        with pytest.raises(ConfigError, match="model.integrator"):
            config_from_dict({"model": {"integrator": "gru"}})

    def test_nonpositive_lr(self):
        with pytest.raises(ConfigError, match="train.lr"):
            config_from_dict({"train": {"lr": 0.0}})

    def test_zero_task_weights(self):
        with pytest.raises(ConfigError, match="alpha/beta"):
            config_from_dict({"train": {"alpha": 0.0, "beta": 0.0}})

    def test_scheduler_factor_range(self):
        with pytest.raises(ConfigError, match="scheduler_factor"):
            config_from_dict({"train": {"scheduler_factor": 1.0}})

    def test_horizons_must_be_three(self):
        with pytest.raises(ConfigError, match="eval.horizons"):
            config_from_dict({"eval": {"horizons": [1.0, 3.0]}})

    def test_bootstrap_b_minimum(self):
        with pytest.raises(ConfigError, match="bootstrap_b"):
            config_from_dict({"eval": {"bootstrap_b": 50}})

    def test_bad_bin_edges(self):
        with pytest.raises(ConfigError, match="bin_edges"):
            config_from_dict({"model": {"bin_edges": [2.0, 1.0]}})

    def test_tau_beyond_horizon(self):
        with pytest.raises(ConfigError, match="eval.tau"):
            config_from_dict({"eval": {"tau": 13.0}})

    def test_small_k_rejected(self):
        with pytest.raises(ConfigError, match="cv.k"):
            config_from_dict({"cv": {"k": 1}})

    def test_simulate_scenario_errors_surface(self):
        with pytest.raises(ConfigError, match="simulate"):
            config_from_dict({"simulate": {"censoring_rate": 1.5}})


class TestTauResolution:
    def test_default_tau_is_min_of_five_and_horizon(self):
        cfg = config_from_dict({"model": {"K": 12}})
        assert cfg.eval.resolve_tau(cfg.model.bins()) == 5.0
        short = config_from_dict({"model": {"K": 3, "T": 3}})
        assert short.eval.resolve_tau(short.model.bins()) == 3.0

    def test_explicit_tau_wins(self):
        cfg = config_from_dict({"eval": {"tau": 2.5}})
        assert cfg.eval.resolve_tau(cfg.model.bins()) == 2.5


class TestRoundTrip:
    def test_dict_round_trip(self):
        doc = {"model": {"backbone": "gcn", "d": 8, "T": 4, "K": 4, "cascade": False},
               "train": {"lr": 0.01, "batch_size": 16, "seed": 9},
               "eval": {"horizons": [1, 2, 3], "tau": 2.0},
               "simulate": {"n": 40, "signal_strength": 0.0},
               "cv": {"k": 3, "repeats": 2}}
        cfg = config_from_dict(doc)
        echoed = config_to_dict(cfg)
        assert config_from_dict(echoed) == cfg
        assert echoed["model"]["d"] == 8
        assert echoed["model"]["backbone"] == "gcn"
        assert echoed["train"]["lr"] == 0.01
        assert echoed["eval"]["horizons"] == [1.0, 2.0, 3.0]

    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg


class TestLoadConfig:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"lr": 0.005}}))
        assert load_config(path).train.lr == 0.005

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)


def test_eval_settings_defaults():
    e = EvalSettings()
    assert e.tau is None
    assert e.bootstrap_b == 1000
    assert e.level == 0.95
