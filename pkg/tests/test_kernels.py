"""The numba kernels and their numpy twins must agree."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from asetm import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")


def both(fn, *args):
    out = {}
    for name in ("numba", "numpy"):
        with K.use_backend(name):
            out[name] = fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])
    return out["numba"], out["numpy"]


def test_linear_scan_parity(rng):
    la, x = -rng.uniform(0.01, 1, (2, 77, 5)), rng.standard_normal((2, 77, 5))
    a, b = both(K.linear_scan, la, x)
    np.testing.assert_allclose(a, b, atol=1e-12)
    g = rng.standard_normal(x.shape)
    ga, gb = both(K.linear_scan_backward, la, a, g)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, atol=1e-12)


@pytest.mark.parametrize("per_state", [False, True])
def test_ssm_parity(rng, per_state):
    n, l, h, p, s = 2, 40, 3, 2, 4
    u = rng.standard_normal((n, l, h, p))
    delta = rng.uniform(0.01, 0.5, (n, l, h))
    rate = rng.uniform(0.5, 4, (h, s))
    bb, cc = rng.standard_normal((n, l, s)), rng.standard_normal((n, l, s))
    d = rng.standard_normal(h)
    (ya, ha), (yb, hb) = both(K.ssm_forward, u, delta, rate, bb, cc, d)
    np.testing.assert_allclose(ya, yb, atol=1e-12)
    g = rng.standard_normal(ya.shape)
    ga, gb = both(K.ssm_backward, u, delta, rate, bb, cc, d, ha, g)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, atol=1e-10)


def test_image_accumulation_parity(rng):
    delays = rng.uniform(-5, 300, 500)
    gains = rng.standard_normal(500)
    a, b = both(K.accumulate_images, 256, delays, gains, 16)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("variant,lam", [(0, math.inf), (1, math.inf), (2, 0.5)])
def test_fxlms_parity(rng, variant, lam):
    n = 3000
    x, d, tgt = rng.standard_normal(n), rng.standard_normal(n), np.zeros(n)
    s = rng.standard_normal(32) * 0.1
    w0 = np.zeros(16)
    mu = 1e-3 if variant != 1 else 1e-2
    wa, wb = w0.copy(), w0.copy()
    with K.use_backend("numba"):
        ya, ea, sa = K.fxlms_loop(x, d, tgt, s, s, wa, mu, variant, lam, lam)
    with K.use_backend("numpy"):
        yb, eb, sb = K.fxlms_loop(x, d, tgt, s, s, wb, mu, variant, lam, lam)
    assert sa == sb
    np.testing.assert_allclose(ya, yb, atol=1e-10)
    np.testing.assert_allclose(ea, eb, atol=1e-10)
    np.testing.assert_allclose(wa, wb, atol=1e-10)


def test_nlms_parity(rng):
    u = rng.standard_normal(2000)
    tgt = np.convolve(u, rng.standard_normal(8))[:2000]
    wa, wb = np.zeros(8), np.zeros(8)
    with K.use_backend("numba"):
        K.nlms_identify(u, tgt, wa, 0.5)
    with K.use_backend("numpy"):
        K.nlms_identify(u, tgt, wb, 0.5)
    np.testing.assert_allclose(wa, wb, atol=1e-10)


def test_backend_switch_errors():
    with pytest.raises(ValueError):
        K.set_backend("cuda")


def test_env_flag_selects_numpy():
    env = dict(os.environ, ASETM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import asetm._kernels as k; print(k.backend(), k.HAVE_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "False"]
