"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 50]

Shapes match one 0.5 s utterance at 16 kHz (48 frames of 400 samples,
nfft 512) and an 8-component, 14-dimensional phrase model.
"""
import argparse
import time

import numpy as np

from vvv import kernels


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    frames = np.zeros((48, 512), dtype=np.complex128)
    frames[:, :400] = rng.normal(size=(48, 400))
    x = rng.normal(size=(4000, 14))
    means, variances = rng.normal(size=(8, 14)), rng.uniform(0.5, 2, size=(8, 14))
    log_w = np.log(np.full(8, 1 / 8))
    pm, rm = rng.normal(size=(8, 14)), rng.normal(size=(8, 14))
    sigma = np.sqrt(variances)

    cases = [
        ("fft_radix2 48x512", kernels.fft_radix2_numpy, kernels.fft_radix2_numba, (frames,)),
        ("diag_gauss_logpdf 4000x8x14", kernels.diag_gauss_logpdf_numpy,
         kernels.diag_gauss_logpdf_numba, (x, means, variances, log_w)),
        ("zscore_matrix 8x8x14", kernels.zscore_matrix_numpy, kernels.zscore_matrix_numba,
         (pm, rm, sigma, False)),
    ]
    print(f"{'kernel':30s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}")
    for name, slow, fast, fargs in cases:
        np.testing.assert_allclose(slow(*fargs), fast(*fargs), rtol=1e-9, atol=1e-9)
        a, b = best_of(slow, fargs, args.repeat), best_of(fast, fargs, args.repeat)
        print(f"{name:30s} {a * 1e6:10.1f}us {b * 1e6:10.1f}us {a / b:7.2f}x")


if __name__ == "__main__":
    main()
