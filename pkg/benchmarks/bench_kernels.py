"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat N]

Numba timings exclude the first (compiling) call.
"""

import argparse
import math
import time

import numpy as np

from asetm import _kernels as K


def cases(rng):
    la, x = -rng.uniform(0.01, 1, (128, 201, 32)), rng.standard_normal((128, 201, 32))
    n, l, h, p, s = 16, 201, 4, 8, 8
    ssm = (rng.standard_normal((n, l, h, p)), rng.uniform(0.01, 0.5, (n, l, h)), rng.uniform(0.5, 4, (h, s)),
           rng.standard_normal((n, l, s)), rng.standard_normal((n, l, s)), rng.standard_normal(h))
    m = 16000
    sig = rng.standard_normal(m)
    sec = 0.1 * rng.standard_normal(256)
    return {
        "linear_scan": lambda: K.linear_scan(la, x),
        "ssm_forward": lambda: K.ssm_forward(*ssm),
        "image_accumulate": lambda: K.accumulate_images(4000, rng.uniform(0, 3900, 20000),
                                                        rng.standard_normal(20000), 16),
        "fxlms (1 s, 512 taps)": lambda: K.fxlms_loop(sig, sig, np.zeros(m), sec, sec, np.zeros(512), 1e-5, 0,
                                                      math.inf, math.inf),
        "nlms_identify (1 s, 256 taps)": lambda: K.nlms_identify(sig, sig, np.zeros(256), 0.5),
    }


def bench(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or ASETM_DISABLE_NUMBA is set); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speed-up':>9s}")
    for name, fn in cases(rng).items():
        with K.use_backend("numba"):
            fn()  # compile
            tn = bench(fn, args.repeat)
        with K.use_backend("numpy"):
            tp = bench(fn, args.repeat)
        print(f"{name:32s} {1e3 * tn:10.2f} {1e3 * tp:10.2f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
