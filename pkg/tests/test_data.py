"""Image files, synthetic degradations and dataset iteration."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weatherremover.data import (KINDS, BatchSampler, DegradationSpec, PairedDataset, dataset_iter,
                                 make_synthetic_dataset, synth_degrade, synth_scene)
from weatherremover.errors import FormatError
from weatherremover.imageio import decode_ppm, encode_ppm, load_image, save_image
from weatherremover.metrics import psnr

# 2x1 image: one red pixel, one pixel of (0, 128, 255); header with a comment
P6_FIXTURE = b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 255])


def test_decode_fixture():
    img = decode_ppm(P6_FIXTURE)
    assert img.shape == (1, 3, 1, 2)
    np.testing.assert_array_equal(img[0, :, 0, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(img[0, :, 0, 1], [0.0, 128 / 255, 1.0])


def test_encode_is_inverse_of_decode():
    assert decode_ppm(encode_ppm(decode_ppm(P6_FIXTURE))).tobytes() == decode_ppm(P6_FIXTURE).tobytes()
    assert encode_ppm(decode_ppm(P6_FIXTURE)) == b"P6\n2 1\n255\n" + P6_FIXTURE[-6:]


@pytest.mark.parametrize("buf,where", [
    (P6_FIXTURE[:-1], "truncated"),
    (P6_FIXTURE + b"\0", "trailing"),
    (b"P3\n2 1\n255\n" + bytes(6), "magic"),
    (b"P6\n2 x\n255\n" + bytes(6), "decimal"),
    (b"P6\n2 1\n65535\n" + bytes(12), "maxval"),
    (b"P6\n0 1\n255\n", "positive"),
    (b"P6\n2 1", "truncated"),
])
def test_malformed_ppm_raises_with_offset(buf, where):
    with pytest.raises(FormatError, match=where) as err:
        decode_ppm(buf)
    assert err.value.offset is not None


def test_load_reports_the_path_once(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(P6_FIXTURE[:-2])
    with pytest.raises(FormatError) as err:
        load_image(p)
    assert str(p) in str(err.value) and str(err.value).count("(at byte") == 1


@pytest.mark.parametrize("suffix", [".ppm", ".png"])
def test_save_load_quantisation_bound(tmp_path, rng, suffix):
    img = rng.uniform(-0.1, 1.1, (1, 3, 9, 7))
    save_image(img, tmp_path / f"x{suffix}")
    back = load_image(tmp_path / f"x{suffix}")
    assert back.shape == img.shape
    assert np.max(np.abs(back - np.clip(img, 0, 1))) <= 0.5 / 255 + 1e-12


def test_scene_is_deterministic_and_in_range():
    a, b, c = synth_scene(24, 16, 3), synth_scene(24, 16, 3), synth_scene(24, 16, 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (1, 3, 24, 16) and a.min() >= 0 and a.max() <= 1


@pytest.mark.parametrize("kind", KINDS)
def test_degradation_is_seeded_and_clamped(kind):
    clean = synth_scene(32, 32, 0)
    spec = DegradationSpec(kind=kind, intensity=0.7, seed=11)
    a, b = synth_degrade(clean, spec), synth_degrade(clean, spec)
    np.testing.assert_array_equal(a.degraded, b.degraded)
    np.testing.assert_array_equal(a.clean, clean)
    assert a.degraded.min() >= 0 and a.degraded.max() <= 1
    assert psnr(a.degraded, clean) < 40


@pytest.mark.parametrize("kind", KINDS)
def test_zero_intensity_is_the_identity(kind):
    clean = synth_scene(16, 16, 1)
    np.testing.assert_array_equal(synth_degrade(clean, DegradationSpec(kind=kind, intensity=0.0)).degraded, clean)


@pytest.mark.parametrize("kind", KINDS)
def test_psnr_falls_as_intensity_rises(kind):
    clean = synth_scene(48, 48, 2) * 0.6
    values = [psnr(synth_degrade(clean, DegradationSpec(kind=kind, intensity=s, seed=5)).degraded, clean)
              for s in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a > b for a, b in zip(values, values[1:])), values


def test_full_fog_is_white():
    spec = DegradationSpec(kind="fog", intensity=1.0, fog_alpha=1.0)
    np.testing.assert_array_equal(synth_degrade(synth_scene(8, 8, 0), spec).degraded, 1.0)


@pytest.mark.parametrize("kwargs", [{"kind": "hail"}, {"intensity": 1.5}, {"fog_alpha": -0.1},
                                    {"streak_length": 0}])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        DegradationSpec(**kwargs)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), intensity=st.floats(0.0, 1.0), kind=st.sampled_from(KINDS))
def test_degradation_only_brightens(seed, intensity, kind):
    clean = synth_scene(16, 16, seed % 1000)
    out = synth_degrade(clean, DegradationSpec(kind=kind, intensity=intensity, seed=seed)).degraded
    assert np.all(out >= clean - 1e-15)


def test_dataset_layout_and_partial_last_batch(tmp_path):
    d = make_synthetic_dataset(tmp_path / "ds", 10, 32, seed=0)
    assert len(list((d / "clean").iterdir())) == len(list((d / "degraded").iterdir())) == 10
    sizes = [g.shape[0] for g, _ in dataset_iter(d, 4, 16, seed=1)]
    assert sizes == [4, 4, 2]
    assert sum(1 for _ in dataset_iter(d, 4, None, seed=1, epochs=2)) == 6


def test_iteration_is_deterministic_and_seed_dependent(tmp_path):
    d = make_synthetic_dataset(tmp_path / "ds", 6, 32, seed=0, with_degraded=False)
    a = [g for g, _ in dataset_iter(d, 2, 16, seed=3)]
    b = [g for g, _ in dataset_iter(d, 2, 16, seed=3)]
    c = [g for g, _ in dataset_iter(d, 2, 16, seed=4)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_precomputed_twins_are_used(tmp_path):
    d = make_synthetic_dataset(tmp_path / "ds", 3, 16, seed=0, spec=DegradationSpec(kind="snow"))
    ds = PairedDataset(d)
    g, c = ds.crop_pair(0, None, np.random.default_rng(0), 0)
    np.testing.assert_array_equal(g, load_image(d / "degraded" / "00000.ppm"))
    np.testing.assert_array_equal(c, load_image(d / "clean" / "00000.ppm"))


def test_sampler_batches_depend_only_on_iteration(toy_data):
    ds = PairedDataset(toy_data[0])
    s = BatchSampler(ds, 4, 32, seed=9)
    first = s(7)
    s(0), s(1)
    again = s(7)
    np.testing.assert_array_equal(first[0], again[0])
    assert first[0].shape == (4, 3, 32, 32)
    assert s(7, batch=2, crop=16)[0].shape == (2, 3, 16, 16)


def test_dataset_errors(tmp_path):
    with pytest.raises(ValueError, match="no images"):
        PairedDataset(tmp_path)
    d = make_synthetic_dataset(tmp_path / "ds", 2, 16, seed=0)
    (d / "degraded" / "00001.ppm").unlink()
    with pytest.raises(ValueError, match="missing"):
        PairedDataset(d)
    with pytest.raises(ValueError):
        list(dataset_iter(tmp_path / "ds", 1, 12, seed=0))
    (d / "degraded").rename(d / "elsewhere")
    with pytest.raises(ValueError, match="exceeds"):
        list(dataset_iter(d, 1, 24, seed=0))
