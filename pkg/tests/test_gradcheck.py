"""The finite-difference checker itself: it must catch wrong gradients."""
import numpy as np
import pytest

from weatherremover import tensor as T
from weatherremover.gradcheck import CheckResult, check_function, check_params_directional, format_report
from weatherremover.params import ParamStore
from weatherremover.tensor import Tensor, result


def scaled_wrong(x):
    y = T.scale(x, 2.0)
    return result("scale", y.data, (x,), lambda g: (2.0001 * g,))


def test_correct_gradient_passes(rng):
    res = check_function("mul", T.mul, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))])
    assert res.passed and res.coords == 12 and res.max_rel_error < 1e-8


def test_small_gradient_error_is_caught(rng):
    res = check_function("scale", scaled_wrong, [rng.standard_normal((3, 4))])
    assert not res.passed
    assert res.max_rel_error == pytest.approx(5e-5, rel=1e-2)


def test_coordinates_are_subsampled(rng):
    res = check_function("gelu", T.gelu, [rng.standard_normal((4, 5, 6, 7))], max_coords=30)
    assert res.coords == 30 and res.passed


def test_directional_check(rng):
    store = ParamStore()
    store.add("w", rng.standard_normal((4, 3)))
    x = Tensor(rng.standard_normal((1, 3, 2, 2)), requires_grad=True)
    ok = check_params_directional("pw", lambda: T.sum_all(T.gelu(T.conv2d_1x1(x, store["w"]))), store, extra=[x])
    bad = check_params_directional("pw", lambda: T.sum_all(scaled_wrong(T.conv2d_1x1(x, store["w"]))), store)
    assert ok.passed and ok.coords == 2
    assert not bad.passed


def test_non_finite_error_fails():
    assert not CheckResult("x", float("nan"), 1).passed


def test_report_format():
    text = format_report([CheckResult("a", 1e-9, 3), CheckResult("bb", 1e-3, 3)])
    lines = text.splitlines()
    assert lines[1].endswith("PASS") and lines[2].endswith("FAIL")
    assert lines[-1] == "1/2 checks passed"
