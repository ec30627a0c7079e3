"""Config file parsing, validation, serialization, and hashing."""

import pytest

from graphreid.config import (ConfigError, RUN_SCHEMA, architecture_hash,
                              cs_scale_flags, default_run_config,
                              default_synth_spec, embed_dim, format_edges,
                              format_groups, load_run_config, parse_config_text,
                              parse_edges, parse_groups, serialize_run_config)


class TestParsing:
    def test_comments_blanks_and_spacing(self):
        text = """
        # a full-line comment
        channels = 20   # trailing comment

        tau=3
        """
        cfg = parse_config_text(text, RUN_SCHEMA)
        assert cfg["channels"] == 20
        assert cfg["tau"] == 3

    def test_defaults_fill_missing_keys(self):
        cfg = parse_config_text("", RUN_SCHEMA)
        assert cfg["channels"] == 40
        assert cfg["cs_scales"] == "s1+s2+s3"

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="unknown key 'chnnels'"):
            parse_config_text("chnnels = 40", RUN_SCHEMA)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("tau = 3\ntau = 5", RUN_SCHEMA)

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("tau 3", RUN_SCHEMA)

    def test_bad_int_rejected(self):
        with pytest.raises(ConfigError, match="bad value for 'tau'"):
            parse_config_text("tau = three", RUN_SCHEMA)

    def test_bool_spellings(self):
        for text, value in (("true", True), ("1", True), ("on", True),
                            ("false", False), ("0", False), ("off", False)):
            cfg = parse_config_text(f"use_mask = {text}", RUN_SCHEMA)
            assert cfg["use_mask"] is value

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="boolean"):
            parse_config_text("use_mask = maybe", RUN_SCHEMA)

    def test_groups_and_edges_strings(self):
        assert parse_groups("0,1,2|3,4") == ((0, 1, 2), (3, 4))
        assert parse_edges("15-13,13-11") == ((15, 13), (13, 11))
        assert format_groups(((0, 1, 2), (3, 4))) == "0,1,2|3,4"
        assert format_edges(((15, 13),)) == "15-13"

    def test_bad_grouping_rejected(self):
        with pytest.raises(ConfigError, match="bad grouping"):
            parse_groups("0,x|1")


class TestValidation:
    def test_default_config_is_valid(self):
        cfg = default_run_config()
        assert cfg["channels"] == 40

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ConfigError, match="divisible"):
            default_run_config(channels=42)

    def test_even_tau_rejected(self):
        with pytest.raises(ConfigError, match="tau"):
            default_run_config(tau=2)

    def test_zero_layers_rejected(self):
        with pytest.raises(ConfigError, match="num_layers"):
            default_run_config(num_layers=0)

    def test_unknown_cs_scales_rejected(self):
        with pytest.raises(ConfigError, match="cs_scales"):
            default_run_config(cs_scales="s1")

    def test_epsilon_bounds(self):
        with pytest.raises(ConfigError, match="epsilon"):
            default_run_config(epsilon=1.0)
        default_run_config(epsilon=0.0)

    def test_negative_loss_weight_rejected(self):
        with pytest.raises(ConfigError, match="lambda_div"):
            default_run_config(lambda_div=-0.5)

    def test_all_adjacency_components_off_rejected(self):
        with pytest.raises(ConfigError, match="adjacency"):
            default_run_config(use_physical=False, use_mask=False,
                               use_context=False)

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            default_run_config(widht=4)
        with pytest.raises(ConfigError, match="unknown key"):
            default_synth_spec(chanels=4)

    def test_bad_metric_rejected(self):
        with pytest.raises(ConfigError, match="triplet_metric"):
            default_run_config(triplet_metric="manhattan")

    def test_synth_occlusion_range(self):
        with pytest.raises(ConfigError, match="occlusion_prob"):
            default_synth_spec(occlusion_prob=1.5)


class TestSerialization:
    def test_round_trip_equality(self):
        cfg = default_run_config(channels=20, tau=5, alpha=0.125,
                                 use_context=False,
                                 s3_groups=((0, 1, 2, 3, 4),
                                            (5, 6, 11, 12), (7, 9),
                                            (8, 10), (13, 14, 15, 16)))
        text = serialize_run_config(cfg)
        back = parse_config_text(text, RUN_SCHEMA)
        assert back == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = default_run_config(steps=17)
        path = tmp_path / "run.cfg"
        path.write_text(serialize_run_config(cfg), encoding="utf-8")
        assert load_run_config(path) == cfg


class TestArchitectureHash:
    def test_default_hash_is_stable(self):
        # frozen regression value: checkpoints store this digest, so it
        # must never drift for an unchanged architecture
        assert architecture_hash(default_run_config()).hex() == "4ba732714a3b5d4d"

    def test_training_keys_do_not_affect_hash(self):
        base = architecture_hash(default_run_config())
        moved = architecture_hash(default_run_config(
            lr=1.0, steps=5, seed=123, log_every=1, margin=0.7))
        assert moved == base

    def test_architecture_keys_change_hash(self):
        base = architecture_hash(default_run_config())
        assert architecture_hash(default_run_config(channels=20)) != base
        assert architecture_hash(default_run_config(tau=5)) != base
        assert architecture_hash(default_run_config(
            use_context=False)) != base

    def test_digest_is_eight_bytes(self):
        assert len(architecture_hash(default_run_config())) == 8


class TestDerivedSettings:
    def test_cs_scale_flags(self):
        assert cs_scale_flags({"cs_scales": "s1+s2+s3"}) == (True, True)
        assert cs_scale_flags({"cs_scales": "s1+s3"}) == (True, False)
        assert cs_scale_flags({"cs_scales": "s2+s3"}) == (False, True)
        assert cs_scale_flags({"cs_scales": "s3"}) == (False, False)

    def test_embed_dim_default_is_quarter_width(self):
        assert embed_dim({"cs_embed_dim": 0, "channels": 40}) == 10
        assert embed_dim({"cs_embed_dim": 6, "channels": 40}) == 6
        assert embed_dim({"cs_embed_dim": 0, "channels": 3}) == 1
