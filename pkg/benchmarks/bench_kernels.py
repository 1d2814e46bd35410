#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Both tables are importable regardless of HERO_DISABLE_NUMBA, so one process
measures both. Outputs are checked for agreement before timing.
"""
import argparse
import math
import time

import numpy as np

from hero import kernels


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases(rng):
    x = rng.random((4, 8, 128, 128))
    cols = kernels.NUMPY["im2col"](x, 3)
    fmap = rng.random((24, 128, 128))
    coords = rng.uniform(0, 127, (512, 2))
    gout = rng.random((512, 24))
    img = rng.random((256, 256))
    us, vs = np.meshgrid(rng.uniform(-2, 258, 256), rng.uniform(-2, 258, 256))
    A, B = 400, 1000
    inten = rng.random((A, B))
    valid = inten > 0.9
    az = np.arange(A) * 2 * math.pi / A
    lm_az = rng.uniform(0, 2 * math.pi, 200)
    lm_rng = rng.uniform(1, 200, 200)
    lm_ref = rng.uniform(0.5, 1, 200)
    return {
        "im2col": (x, 3),
        "col2im": (cols, x.shape, 3),
        "sample": (fmap, coords),
        "sample_backward": (fmap, coords, gout),
        "resample": (img, us, vs, False),
        "polar_to_cart": (inten, valid, az, 0.25, 640, 0.25),
        "render_blobs": (az, B, 0.25, lm_az, lm_rng, lm_ref, 1.5, 2 * math.pi / A),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, a in cases(rng).items():
        ref = kernels.NUMPY[name](*a)
        got = kernels.NUMBA[name](*a)
        ref = ref if isinstance(ref, tuple) else (ref,)
        got = got if isinstance(got, tuple) else (got,)
        diff = max(float(np.max(np.abs(np.asarray(g, float) - np.asarray(r, float)))) for g, r in zip(got, ref))
        t_nb = timeit(kernels.NUMBA[name], *a, repeat=args.repeat)
        t_np = timeit(kernels.NUMPY[name], *a, repeat=args.repeat)
        print(f"{name:<16}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>9.2f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
