#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy fallback.

Times each kernel on detector-sized inputs plus one end-to-end training
epoch per backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--batch 64] [--repeats 2000]
"""

import argparse
import importlib
import time

import numpy as np

from fdiafl.rng import substream


def timeit(fn, repeats):
    # warm up, then best-of-3 timing blocks
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def kernel_cases(k, rng, batch):
    x = rng.normal(size=(batch, 19))
    w0 = rng.normal(size=(19, 128))
    b0 = rng.normal(size=128)
    z = rng.normal(size=(batch, 128))
    dz = rng.normal(size=(batch, 128))
    gamma = rng.uniform(0.5, 2.0, 128)
    beta = rng.normal(size=128)
    _, _, _, xhat, inv_std = k.bn_train_forward(z, gamma, beta, 1e-5)
    p = rng.random((batch, 19))
    y = (rng.random((batch, 19)) < 0.5).astype(np.float64)
    wvec = rng.normal(size=12_000)
    g = rng.normal(size=12_000)
    m = np.zeros(12_000)
    v = np.zeros(12_000)
    lo, hi = 1e-7, 1.0 - 1e-7
    return {
        "affine_forward 19->128": lambda: k.affine_forward(x, w0, b0),
        "affine_backward": lambda: k.affine_backward(dz, x, w0),
        "bn_train_forward": lambda: k.bn_train_forward(z, gamma, beta, 1e-5),
        "bn_backward": lambda: k.bn_backward(dz, xhat, gamma, inv_std),
        "relu_forward": lambda: k.relu_forward(z),
        "sigmoid_forward": lambda: k.sigmoid_forward(p),
        "bce_sigmoid_grad": lambda: k.bce_sigmoid_grad(p, y, lo, hi),
        "adam_update 12k": lambda: k.adam_update(wvec, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8),
    }


_EPOCH_SNIPPET = """
import time
import numpy as np
from fdiafl.rng import substream
from fdiafl.neural import TrainConfig, adam_step, backward, forward, init_adam, init_params

n, batch = 4096, {batch}
rng = substream(3, "bench-data")
x = rng.normal(size=(n, 19))
y = (rng.random((n, 19)) < 0.3).astype(np.float64)
params = init_params((19, 128, 64, 19), substream(4, "bench-init"))
cfg = TrainConfig(batch_size=batch)
state = init_adam(params)

def epoch():
    for lo in range(0, n, batch):
        probs, cache = forward(params, x[lo:lo + batch], cfg, train=True, rng=rng)
        grads = backward(cache, y[lo:lo + batch])
        adam_step(params, grads, state, cfg)

epoch()  # warm up
best = min(__import__("timeit").repeat(epoch, number=1, repeat=5))
print(best)
"""


def epoch_case(backend_name, batch):
    """One detector training epoch, timed in a clean subprocess per backend."""
    import os
    import subprocess
    import sys

    env = dict(os.environ, FDIAFL_KERNELS=backend_name)
    out = subprocess.run(
        [sys.executable, "-c", _EPOCH_SNIPPET.format(batch=batch)],
        env=env, capture_output=True, text=True, check=True,
    )
    return float(out.stdout.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    py = importlib.import_module("fdiafl.neural._kernels_py")
    try:
        cy = importlib.import_module("fdiafl.neural._kernels")
    except ImportError:
        print("compiled extension not built; run pip install -e . first")
        return

    print(f"{'kernel':<24} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    rng = substream(1, "bench")
    py_cases = kernel_cases(py, substream(2, "bench-args"), args.batch)
    cy_cases = kernel_cases(cy, substream(2, "bench-args"), args.batch)
    for name in py_cases:
        t_py = timeit(py_cases[name], args.repeats)
        t_cy = timeit(cy_cases[name], args.repeats)
        print(f"{name:<24} {t_py * 1e6:>9.1f}u {t_cy * 1e6:>9.1f}u {t_py / t_cy:>7.2f}x")

    t_py = epoch_case("py", args.batch)
    t_cy = epoch_case("cy", args.batch)
    print(f"{'train epoch (4096)':<24} {t_py * 1e3:>8.1f}ms {t_cy * 1e3:>8.1f}ms "
          f"{t_py / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
