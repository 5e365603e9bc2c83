from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weatherremover.config import ModelConfig, parse_kv_text
from weatherremover.errors import ConfigError
from weatherremover.train import RunConfig, split_config_text

TOY_CONF = Path(__file__).resolve().parents[1] / "configs" / "toy.conf"


def test_default_widths():
    cfg = ModelConfig()
    assert cfg.enc_widths == (48, 96, 192)
    assert cfg.latent_width == 384
    assert cfg.dec_widths == (192, 96, 48)
    assert cfg.hidden(48) == 96


def test_kv_text_comments_and_blank_lines():
    text = "# header\n\nbase_dim = 16   # inline\n enc_blocks=1, 2,3\n"
    assert parse_kv_text(text) == {"base_dim": "16", "enc_blocks": "1, 2,3"}


@pytest.mark.parametrize("text", ["base_dim 16", "= 3", "a = 1\na = 2"])
def test_malformed_kv_text(text):
    with pytest.raises(ConfigError):
        parse_kv_text(text)


@pytest.mark.parametrize("changes", [
    {"base_dim": 7}, {"base_dim": 0}, {"enc_blocks": (1, 1)}, {"enc_heads": (5, 8, 12)},
    {"sra_size": 0}, {"gfn_expansion": Fraction(0)}, {"resample_kernel": 5}, {"qkv_style": "conv"},
    {"in_channels": 1}, {"refine_blocks": 0},
])
def test_invalid_configs_raise(changes):
    with pytest.raises(ConfigError):
        ModelConfig().replace(**changes)


def test_values_are_parsed_by_field_type():
    cfg = ModelConfig.from_mapping({"gfn_expansion": "8/3", "gate_gfn": "false", "dec_blocks": "1,1,1"})
    assert cfg.gfn_expansion == Fraction(8, 3) and cfg.gate_gfn is False and cfg.dec_blocks == (1, 1, 1)
    with pytest.raises(ConfigError):
        ModelConfig.from_mapping({"gate_gfn": "perhaps"})
    with pytest.raises(ConfigError):
        ModelConfig.from_mapping({"depth": "3"})


@settings(max_examples=50, deadline=None)
@given(D=st.sampled_from([8, 16, 24, 48]), gamma=st.sampled_from(["1", "4/3", "2", "8/3"]),
       gates=st.tuples(st.booleans(), st.booleans(), st.booleans()), K=st.sampled_from([1, 3]))
def test_text_round_trip(D, gamma, gates, K):
    cfg = ModelConfig.tiny(base_dim=D, gfn_expansion=Fraction(gamma), gate_gfn=gates[0], gate_dstage=gates[1],
                           decoder_gating=gates[2], resample_kernel=K)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_toy_config_file_is_the_tiny_model():
    model, run = split_config_text(TOY_CONF.read_text())
    assert model == ModelConfig.tiny()
    assert (run.iterations, run.batch, run.crop, run.lr_initial) == (200, 4, 32, 0.002)


def test_overrides_win_and_unknown_keys_fail():
    model, run = split_config_text("base_dim = 16\nbatch = 2", {"batch": "8"}, ModelConfig.tiny())
    assert model.base_dim == 16 and run.batch == 8
    with pytest.raises(ConfigError):
        split_config_text("colour = blue")


@pytest.mark.parametrize("kwargs", [{"iterations": -1}, {"crop": 30}, {"lr_decay": "step"},
                                    {"schedule": "10:4"}, {"schedule": "10:4:33"}, {"precision": "f16"}])
def test_invalid_run_configs(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_schedule_and_cosine_decay():
    run = RunConfig(iterations=11, lr_initial=1.0, lr_final=0.0, batch=4, crop=32, schedule="5:2:64, 8:1:96")
    assert [run.stage_at(i) for i in (0, 4, 5, 8, 10)] == [(4, 32), (4, 32), (2, 64), (1, 96), (1, 96)]
    assert run.lr_at(0) == 1.0
    assert abs(run.lr_at(5) - 0.5) < 1e-12
    assert abs(run.lr_at(10)) < 1e-12
    assert all(run.lr_at(i) >= run.lr_at(i + 1) for i in range(10))
