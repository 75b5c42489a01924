"""Selective state-space scan with a hand-written backward pass.

Shapes (``N`` sequences of length ``L``, ``H`` heads of ``P`` channels,
state size ``S``)::

    u      (N, L, H, P)   input
    delta  (N, L, H)      positive step size, one per head
    a_log  (H,)           scalar decay per head            (Mamba2 style)
           (H, S)         per-state diagonal decay         (Mamba1 style)
    b, c   (N, L, S)      input and readout projections
    d      (H,)           skip gain

    decay[t] = exp(-delta[t] * exp(a_log))
    h[t]     = decay[t] * h[t-1] + delta[t] * u[t] (outer) b[t]
    y[t]     = h[t] @ c[t] + d * u[t]

The Mamba1 variant is the same recurrence with ``P = 1`` (one step size per
channel) and a decay that also varies over the state index.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..autodiff.ops import _data
from ..autodiff.tensor import Tensor, record


def _shapes(ud, dd, ad, bd, cd, skip):
    if ud.ndim != 4:
        raise ValueError(f"selective_scan: u must be (N, L, H, P), got {ud.shape}")
    n, l, h, _ = ud.shape
    s = bd.shape[-1]
    if dd.shape != (n, l, h):
        raise ValueError(f"selective_scan: delta {dd.shape} does not match u {ud.shape}")
    if bd.shape != (n, l, s) or cd.shape != (n, l, s):
        raise ValueError(f"selective_scan: b {bd.shape} / c {cd.shape} must both be {(n, l, s)}")
    if ad.shape not in ((h,), (h, s)):
        raise ValueError(f"selective_scan: a_log must be ({h},) or ({h}, {s}), got {ad.shape}")
    if skip.shape != (h,):
        raise ValueError(f"selective_scan: d must be ({h},), got {skip.shape}")


def selective_scan(u, delta, a_log, b, c, d) -> Tensor:
    ud, dd, ad, bd, cd, sd = (_data(v) for v in (u, delta, a_log, b, c, d))
    _shapes(ud, dd, ad, bd, cd, sd)
    s = bd.shape[-1]
    per_state = ad.ndim == 2
    rate = np.exp(ad) if per_state else np.repeat(np.exp(ad)[:, None], s, axis=1)
    y, hs = _kernels.ssm_forward(ud, dd, rate, bd, cd, sd)

    def bw(g):
        gu, gdelta, grate, gb, gc, gd = _kernels.ssm_backward(ud, dd, rate, bd, cd, sd, hs, g)
        ga = grate * rate
        if not per_state:
            ga = ga.sum(axis=1)
        return gu, gdelta, ga, gb, gc, gd

    return record("selective_scan", y, (u, delta, a_log, b, c, d), bw)


def selective_scan_reference(u, delta, a_log, b, c, d) -> np.ndarray:
    """Step-by-step recurrence on plain arrays; slow, used as a test oracle."""
    u, delta, a_log, b, c, d = (np.asarray(v, dtype=np.float64) for v in (u, delta, a_log, b, c, d))
    n, l, h, p = u.shape
    s = b.shape[-1]
    a = np.exp(a_log)
    if a.ndim == 1:
        a = np.repeat(a[:, None], s, axis=1)
    out = np.zeros_like(u)
    for i in range(n):
        state = np.zeros((h, p, s))
        for t in range(l):
            decay = np.exp(-delta[i, t][:, None] * a)  # (H, S)
            state = decay[:, None, :] * state + (delta[i, t][:, None] * u[i, t])[..., None] * b[i, t]
            out[i, t] = state @ c[i, t] + d[:, None] * u[i, t]
    return out
