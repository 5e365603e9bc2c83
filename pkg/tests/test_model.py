"""Gated UNet backbone: shapes, identities, census and initialisation."""
from collections import Counter

import numpy as np
import pytest

from weatherremover import cost
from weatherremover.config import QKV_STYLES, ModelConfig
from weatherremover.errors import ShapeError
from weatherremover.model import (d_stage, forward, init_params, pad_to_multiple, param_shapes, restore,
                                  stage_plan, u_stage)
from weatherremover.tensor import Tensor

VARIANTS = [
    {},
    {"gate_gfn": False},
    {"gate_dstage": False},
    {"gate_gfn": False, "gate_dstage": False},
    {"decoder_gating": True},
    {"use_sra": False},
    {"learn_temperature": False},
    {"resample_kernel": 1},
] + [{"qkv_style": s} for s in QKV_STYLES]


def test_forward_keeps_the_input_shape(tiny_model, rng):
    x = rng.uniform(0, 1, (2, 3, 16, 24))
    assert tiny_model(Tensor(x)).shape == x.shape


def test_zero_head_model_is_the_identity(tiny_config, rng):
    model = init_params(tiny_config, seed=3, precision="f64", zero_head=True)
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    np.testing.assert_array_equal(model(Tensor(x)).data, x)


def test_stage_shapes(tiny_model, rng):
    cfg = tiny_model.config
    p = tiny_model.params.view("")
    D = cfg.base_dim
    down, skip = d_stage(Tensor(rng.standard_normal((1, D, 16, 8))), p, cfg, 1)
    assert skip.shape == (1, D, 16, 8)
    assert down.shape == (1, 2 * D, 8, 4)
    up = u_stage(Tensor(rng.standard_normal((1, 8 * D, 2, 1))), Tensor(rng.standard_normal((1, 4 * D, 4, 2))),
                 p, cfg, 1)
    assert up.shape == (1, 4 * D, 4, 2)


def test_decoder_rejects_a_mismatched_skip(tiny_model, rng):
    cfg = tiny_model.config
    with pytest.raises(ShapeError):
        u_stage(Tensor(rng.standard_normal((1, 8 * cfg.base_dim, 2, 2))),
                Tensor(rng.standard_normal((1, 4 * cfg.base_dim, 2, 2))), tiny_model.params.view(""), cfg, 1)


@pytest.mark.parametrize("shape", [(1, 3, 12, 16), (1, 3, 16, 20), (1, 1, 16, 16), (3, 16, 16)])
def test_bad_input_shapes_raise(tiny_model, shape):
    with pytest.raises(ShapeError):
        tiny_model(Tensor(np.zeros(shape)))


def test_samples_in_a_batch_are_independent(tiny_model, rng):
    x = rng.uniform(0, 1, (2, 3, 8, 16))
    both = tiny_model(Tensor(x)).data
    np.testing.assert_allclose(both[1:], tiny_model(Tensor(x[1:])).data, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("changes", VARIANTS, ids=lambda c: ",".join(f"{k}={v}" for k, v in c.items()) or "default")
def test_census_matches_constructed_params(changes):
    cfg = ModelConfig.tiny(**changes)
    model = init_params(cfg)
    report = cost.count_params(cfg)
    assert model.num_params() == report.params
    grouped = Counter()
    for name, t in model.params.items():
        grouped[cost.param_module(name)] += t.data.size
    assert dict(grouped) == {r.path: r.params for r in report.rows if r.params}


def test_full_size_census_matches_closed_form():
    cfg = ModelConfig()
    assert sum(int(np.prod(s)) for _, s in param_shapes(cfg)) == cost.count_params(cfg).params == 24_337_955


def test_stage_plan_covers_every_block(tiny_config):
    plan = {prefix: count for prefix, _, count in stage_plan(tiny_config)}
    assert plan["enc1.main"] == 2 and plan["enc1.gate"] == 1
    assert "dec1.gate" not in plan
    assert plan["bottleneck"] == plan["refine"] == 2


def test_init_is_deterministic_and_seed_dependent(tiny_config):
    a, b, c = (init_params(tiny_config, seed=s) for s in (1, 1, 2))
    for (n, x), (_, y), (_, z) in zip(a.params.items(), b.params.items(), c.params.items()):
        np.testing.assert_array_equal(x.data, y.data)
        if n.endswith(".weight") and not n.startswith("head."):
            assert not np.array_equal(x.data, z.data), n


def test_init_precision(tiny_config):
    assert init_params(tiny_config, precision="f32").dtype == np.float32
    assert init_params(tiny_config, precision="f64").dtype == np.float64
    with pytest.raises(ValueError):
        init_params(tiny_config, precision="f16")


def test_temperatures_start_at_inverse_sqrt_head_dim(tiny_config):
    m = init_params(tiny_config, precision="f64")
    np.testing.assert_allclose(m.params["enc1.main.0.msa.temperature"].data, 1 / np.sqrt(8))
    np.testing.assert_allclose(m.params["bottleneck.0.msa.temperature"].data, 1 / np.sqrt(8))


@pytest.mark.parametrize("hw", [(100, 75), (3, 5), (8, 8)])
def test_pad_to_multiple(rng, hw):
    x = rng.uniform(0, 1, (1, 3, *hw))
    padded, size = pad_to_multiple(x)
    assert size == hw
    assert padded.shape[2] % 8 == 0 and padded.shape[3] % 8 == 0
    np.testing.assert_array_equal(padded[..., : hw[0], : hw[1]], x)


def test_restore_with_padding_crops_back(tiny_config, rng):
    model = init_params(tiny_config, seed=0, precision="f64", zero_head=True)
    x = rng.uniform(0, 1, (1, 3, 20, 13))
    np.testing.assert_array_equal(restore(model, x, pad=True), x)
    with pytest.raises(ShapeError):
        restore(model, x)


def test_forward_is_a_function_of_params(tiny_model, rng):
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    np.testing.assert_array_equal(forward(tiny_model.params, x, tiny_model.config).data, tiny_model(x).data)
