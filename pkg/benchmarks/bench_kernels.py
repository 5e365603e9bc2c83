"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and the
speed-up, followed by a full toy-model forward+backward step under each.
"""
import argparse
import timeit

import numpy as np

from weatherremover.config import ModelConfig
from weatherremover.metrics import pseudo_huber
from weatherremover.model import init_params
from weatherremover.tensor import Tape, Tensor, _backend


def kernel_cases(rng):
    x = rng.standard_normal((4, 32, 32, 32)).astype(np.float32)
    w = rng.standard_normal((32, 3, 3)).astype(np.float32)
    gy = rng.standard_normal(x.shape).astype(np.float32)
    big = rng.standard_normal((4, 32, 64, 64)).astype(np.float32)
    pooled = rng.standard_normal((4, 32, 7, 7)).astype(np.float32)
    return {
        "dw3x3_forward": lambda k: k.dw3x3_forward(x, w),
        "dw3x3_backward": lambda k: k.dw3x3_backward(x, w, gy),
        "adaptive_pool_forward": lambda k: k.adaptive_pool_forward(big, 7),
        "adaptive_pool_backward": lambda k: k.adaptive_pool_backward(pooled, 64, 64),
        "im2col3x3": lambda k: k.im2col3x3(x),
        "gelu_forward": lambda k: k.gelu_forward(x),
    }


def train_step(model, degraded, clean):
    model.params.zero_grad()
    with Tape() as tape:
        tape.backward(pseudo_huber(Tensor(clean), model(Tensor(degraded))))


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    backends = {"python": _backend.python_kernels, "cython": _backend.compiled_kernels}
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, fn in kernel_cases(rng).items():
        t = {b: best(lambda: fn(k), args.repeat) for b, k in backends.items()}
        print(f"{name:<24}{t['python'] * 1e3:12.2f}{t['cython'] * 1e3:12.2f}{t['python'] / t['cython']:10.1f}x")

    model = init_params(ModelConfig.tiny(), seed=0, zero_head=False)
    degraded = rng.uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
    clean = rng.uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
    before = _backend.BACKEND
    t = {}
    try:
        for b in backends:
            _backend.use(b)
            train_step(model, degraded, clean)
            t[b] = best(lambda: train_step(model, degraded, clean), args.repeat)
    finally:
        _backend.use(before)
    print(f"{'toy train step (4x32x32)':<24}{t['python'] * 1e3:12.2f}{t['cython'] * 1e3:12.2f}"
          f"{t['python'] / t['cython']:10.1f}x")


if __name__ == "__main__":
    main()
