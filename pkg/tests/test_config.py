import dataclasses

import pytest

from privfed.config import (
    ExperimentConfig,
    canonical_text,
    config_hash,
    load_config,
    parse_config_text,
    write_config,
)
from privfed.errors import ConfigValidationError


class TestCanonicalForm:
    def test_round_trip(self):
        cfg = ExperimentConfig(seed=99, institutions_sizes=None)
        assert parse_config_text(canonical_text(cfg)) == cfg

    def test_round_trip_with_sizes(self):
        cfg = ExperimentConfig(task_num_samples=60, institutions_count=3,
                               institutions_sizes=(30, 20, 10))
        assert parse_config_text(canonical_text(cfg)) == cfg

    def test_hash_stable_under_key_order(self):
        cfg = ExperimentConfig(seed=5)
        lines = canonical_text(cfg).strip().split("\n")
        shuffled = "\n".join(reversed(lines)) + "\n"
        assert config_hash(parse_config_text(shuffled)) == config_hash(cfg)

    def test_hash_changes_with_any_field(self):
        base = config_hash(ExperimentConfig())
        assert config_hash(ExperimentConfig(seed=1)) != base
        assert config_hash(ExperimentConfig(dp_epsilon=2.0)) != base

    def test_comments_and_blanks_ignored(self):
        text = "# a comment\n\nseed=4\nrounds=3\n"
        cfg = parse_config_text(text)
        assert cfg.seed == 4 and cfg.rounds == 3

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig(seed=123, agg_mode="plain")
        path = tmp_path / "exp.cfg"
        write_config(cfg, path)
        assert load_config(path) == cfg


class TestValidation:
    def test_valid_default(self):
        ExperimentConfig().validate()

    def test_all_violations_listed(self):
        cfg = ExperimentConfig(
            task_feature_dim=0,
            institutions_count=0,
            rounds=0,
            dp_epsilon=-1.0,
            network_drop_probability=1.5,
            agg_mode="quantum",
        )
        with pytest.raises(ConfigValidationError) as exc:
            cfg.validate()
        joined = "\n".join(exc.value.errors)
        for key in ("task.feature_dim", "institutions.count", "rounds",
                    "dp.epsilon", "network.drop_probability", "agg.mode"):
            assert key in joined
        assert len(exc.value.errors) >= 6

    def test_sizes_must_sum(self):
        cfg = ExperimentConfig(task_num_samples=100, institutions_count=2,
                               institutions_sizes=(50, 40))
        with pytest.raises(ConfigValidationError):
            cfg.validate()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text("myst.key=1\n")
        assert "unknown key" in exc.value.errors[0]

    def test_bad_value_rejected_with_line(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text("rounds=three\n")
        assert "line 1" in exc.value.errors[0]

    def test_rounds_cannot_exceed_policy(self):
        cfg = dataclasses.replace(ExperimentConfig(), rounds=50, policy_max_rounds=10)
        with pytest.raises(ConfigValidationError):
            cfg.validate()
