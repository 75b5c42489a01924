"""Differentiable primitives.

Binary elementwise ops accept equal shapes or a *leading-batch* expansion,
where one operand's shape is a suffix of the other's (a bias of shape ``(C,)``
against ``(B, T, F, C)``). Anything else must be made explicit with
:func:`expand` or :func:`reshape`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .. import _kernels
from .tensor import Tensor, as_tensor, record

TWO_PI = 2.0 * math.pi


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_bcast(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim < a.ndim and sa[a.ndim - b.ndim:] == sb:
        return
    if a.ndim < b.ndim and sb[b.ndim - a.ndim:] == sa:
        return
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb} (only leading-batch expansion is allowed)")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_bcast("add", ad, bd)
    return record("add", ad + bd, (a, b),
                  lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_bcast("sub", ad, bd)
    return record("sub", ad - bd, (a, b),
                  lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)))


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_bcast("mul", ad, bd)
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_bcast("div", ad, bd)
    out = ad / bd
    return record("div", out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    return record("neg", -_data(a), (a,), lambda g: (-g,))


def atan2(y, x) -> Tensor:
    yd, xd = _data(y), _data(x)
    if yd.shape != xd.shape:
        raise ValueError(f"atan2: shapes differ {yd.shape} vs {xd.shape}")
    r2 = xd * xd + yd * yd + 1e-30
    return record("atan2", np.arctan2(yd, xd), (y, x),
                  lambda g: (g * xd / r2, -g * yd / r2))


def cmul(a, b) -> Tensor:
    """Complex product of tensors whose last axis holds (real, imag)."""
    ad, bd = _data(a), _data(b)
    if ad.shape[-1] != 2 or bd.shape[-1] != 2:
        raise ValueError(f"cmul: last axis must have size 2, got {ad.shape} and {bd.shape}")
    _check_bcast("cmul", ad, bd)
    ar, ai = ad[..., 0], ad[..., 1]
    br, bi = bd[..., 0], bd[..., 1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def bw(g):
        gr, gi = g[..., 0], g[..., 1]
        ga = np.stack([gr * br + gi * bi, -gr * bi + gi * br], axis=-1)
        gb = np.stack([gr * ar + gi * ai, -gr * ai + gi * ar], axis=-1)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record("cmul", out, (a, b), bw)


# -- elementwise unary ----------------------------------------------------------

def exp(a) -> Tensor:
    out = np.exp(_data(a))
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    ad = _data(a)
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    out = np.sqrt(_data(a))
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    ad = _data(a)
    return record("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ad = _data(a)
    return record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def tanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def erf(a) -> Tensor:
    ad = _data(a)
    return record("erf", special.erf(ad), (a,),
                  lambda g: (g * (2.0 / math.sqrt(math.pi)) * np.exp(-ad * ad),))


def sigmoid(a) -> Tensor:
    out = special.expit(_data(a))
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    ad = _data(a)
    s = special.expit(ad)
    return record("silu", ad * s, (a,), lambda g: (g * s * (1.0 + ad * (1.0 - s)),))


def softplus(a) -> Tensor:
    ad = _data(a)
    return record("softplus", np.logaddexp(0.0, ad), (a,), lambda g: (g * special.expit(ad),))


def cos(a) -> Tensor:
    ad = _data(a)
    return record("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def sin(a) -> Tensor:
    ad = _data(a)
    return record("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def minimum(a, c: float) -> Tensor:
    """Elementwise ``min(a, c)`` against a constant."""
    ad = _data(a)
    keep = ad <= c
    return record("minimum", np.where(keep, ad, c), (a,), lambda g: (g * keep,))


def maximum(a, c: float) -> Tensor:
    ad = _data(a)
    keep = ad >= c
    return record("maximum", np.where(keep, ad, c), (a,), lambda g: (g * keep,))


def anti_wrap(a) -> Tensor:
    """Distance to the nearest multiple of 2 pi: ``|t - 2 pi round(t / 2 pi)|``."""
    ad = _data(a)
    r = ad - TWO_PI * np.round(ad / TWO_PI)
    return record("anti_wrap", np.abs(r), (a,), lambda g: (g * np.sign(r),))


# -- reductions / normalisation -------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    ad = _data(a)
    axes = _norm_axis(axis, ad.ndim)
    out = ad.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return record("sum", out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    ad = _data(a)
    axes = _norm_axis(axis, ad.ndim)
    count = int(np.prod([ad.shape[i] for i in axes])) if axes else 1
    out = ad.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, ad.shape).copy(),)

    return record("mean", out, (a,), bw)


def softmax(a, axis: int = -1) -> Tensor:
    ad = _data(a)
    z = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", out, (a,),
                  lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    ad = _data(a)
    mu = ad.mean(axis=-1, keepdims=True)
    xc = ad - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = _data(gamma) if gamma is not None else None
    bd = _data(beta) if beta is not None else None
    out = xhat * gd if gd is not None else xhat.copy()
    if bd is not None:
        out = out + bd
    def bw(g):
        gg = g * gd if gd is not None else g
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        ggam = _unbroadcast(g * xhat, gd.shape) if gd is not None else None
        gbet = _unbroadcast(g, bd.shape) if bd is not None else None
        return gx, ggam, gbet

    return record("layer_norm", out, (a, gamma, beta), bw)


# -- shape manipulation ---------------------------------------------------------

def reshape(a, shape) -> Tensor:
    ad = _data(a)
    return record("reshape", ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a, axes=None) -> Tensor:
    ad = _data(a)
    axes = tuple(range(ad.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return record("transpose", np.transpose(ad, axes), (a,), lambda g: (np.transpose(g, inv),))


def expand(a, shape) -> Tensor:
    """Explicit broadcast to ``shape`` (numpy rules); gradient sums back."""
    ad = _data(a)
    out = np.broadcast_to(ad, shape)
    lead = len(shape) - ad.ndim

    def bw(g):
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(ad.shape) if n == 1 and shape[lead + i] != 1)
        gs = g.sum(axis=axes, keepdims=True) if axes else g
        return (gs.reshape(ad.shape),)

    return record("expand", np.ascontiguousarray(out), (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    datas = [_data(t) for t in tensors]
    nd = datas[0].ndim
    ax = axis % nd
    for d in datas[1:]:
        if d.ndim != nd or any(d.shape[i] != datas[0].shape[i] for i in range(nd) if i != ax):
            raise ValueError(f"concat: incompatible shapes {[x.shape for x in datas]} on axis {axis}")
    sizes = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return record("concat", np.concatenate(datas, axis=ax), tuple(tensors), bw)


def stack(tensors, axis: int = -1) -> Tensor:
    datas = [_data(t) for t in tensors]
    out = np.stack(datas, axis=axis)
    ax = axis % out.ndim
    return record("stack", out, tuple(tensors),
                  lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(datas))))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a, idx) -> Tensor:
    ad = _data(a)
    basic = _is_basic(idx)

    def bw(g):
        out = np.zeros_like(ad)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return record("getitem", ad[idx], (a,), bw)


def flip(a, axis: int) -> Tensor:
    ad = _data(a)
    return record("flip", np.flip(ad, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def pad(a, widths, mode: str = "constant") -> Tensor:
    """Zero or reflect padding; ``widths`` as in :func:`numpy.pad`."""
    ad = _data(a)
    widths = [tuple(w) for w in widths]
    if mode == "constant":
        out = np.pad(ad, widths)
        sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, ad.shape))
        return record("pad", out, (a,), lambda g: (g[sl].copy(),))
    if mode != "reflect":
        raise ValueError(f"unsupported pad mode {mode!r}")
    # reflect is a gather; express it through an index map on each padded axis
    idx_maps = []
    for (lo, hi), n in zip(widths, ad.shape):
        base = np.arange(-lo, n + hi)
        period = 2 * (n - 1) if n > 1 else 1
        m = np.abs(base) % period if n > 1 else np.zeros_like(base)
        m = np.where(m >= n, period - m, m)
        idx_maps.append(m)
    out = ad[np.ix_(*idx_maps)]

    def bw(g):
        res = g
        for axis, m in enumerate(idx_maps):
            acc = np.zeros(res.shape[:axis] + (ad.shape[axis],) + res.shape[axis + 1:])
            np.add.at(acc, (slice(None),) * axis + (m,), res)
            res = acc
        return (res,)

    return record("pad", out, (a,), bw)


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"matmul: batch shapes differ {ad.shape} and {bd.shape}")
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            a2 = ad.reshape(-1, ad.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return record("matmul", out, (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# -- convolutions (channels-last) -------------------------------------------------

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1) -> Tensor:
    """2-D cross-correlation on ``(B, H, W, Cin)`` with kernel ``(kh, kw, Cin, Cout)``.

    ``padding`` is ``(ph, pw)`` symmetric or ``((top, bottom), (left, right))``.
    """
    xd, wd = _data(x), _data(w)
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[-1] != wd.shape[2]:
        raise ValueError(f"conv2d: input {xd.shape} incompatible with kernel {wd.shape}")
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    if isinstance(padding, int):
        pads = ((padding, padding), (padding, padding))
    else:
        pads = tuple(_pair(p) for p in padding)
    kh, kw = wd.shape[:2]
    xp = np.pad(xd, ((0, 0), pads[0], pads[1], (0, 0)))
    hp, wp = xp.shape[1:3]
    ho = (hp - (kh - 1) * dh - 1) // sh + 1
    wo = (wp - (kw - 1) * dw - 1) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: kernel {wd.shape[:2]} larger than padded input {xp.shape[1:3]}")
    out = np.zeros((xd.shape[0], ho, wo, wd.shape[3]))
    taps = []
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i * dh, i * dh + (ho - 1) * sh + 1, sh),
                  slice(j * dw, j * dw + (wo - 1) * sw + 1, sw), slice(None))
            taps.append((i, j, sl))
            out += xp[sl] @ wd[i, j]
    bd = _data(b) if b is not None else None
    if bd is not None:
        out += bd

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        g2 = g.reshape(-1, g.shape[-1])
        for i, j, sl in taps:
            patch = xp[sl]
            gw[i, j] = patch.reshape(-1, patch.shape[-1]).T @ g2
            gxp[sl] += g @ wd[i, j].T
        gx = gxp[:, pads[0][0]: pads[0][0] + xd.shape[1], pads[1][0]: pads[1][0] + xd.shape[2]]
        gb = g2.sum(axis=0) if bd is not None else None
        return gx.copy(), gw, gb

    return record("conv2d", out, (x, w, b), bw)


def conv2d_transpose(x, w, b=None, stride=1, output_padding=0) -> Tensor:
    """Adjoint of an unpadded :func:`conv2d` with respect to its input.

    ``x`` is ``(B, H, W, Cin)``, ``w`` is ``(kh, kw, Cin, Cout)``; the output has
    spatial size ``(H - 1) * s + k + output_padding``.
    """
    xd, wd = _data(x), _data(w)
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[-1] != wd.shape[2]:
        raise ValueError(f"conv2d_transpose: input {xd.shape} incompatible with kernel {wd.shape}")
    sh, sw = _pair(stride)
    oph, opw = _pair(output_padding)
    kh, kw = wd.shape[:2]
    bsz, h, wdt, _ = xd.shape
    ho = (h - 1) * sh + kh + oph
    wo = (wdt - 1) * sw + kw + opw
    out = np.zeros((bsz, ho, wo, wd.shape[3]))
    taps = []
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i, i + (h - 1) * sh + 1, sh), slice(j, j + (wdt - 1) * sw + 1, sw),
                  slice(None))
            taps.append((i, j, sl))
            out[sl] += xd @ wd[i, j]
    bd = _data(b) if b is not None else None
    if bd is not None:
        out += bd

    def bw(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        x2 = xd.reshape(-1, xd.shape[-1])
        for i, j, sl in taps:
            gs = g[sl]
            gx += gs @ wd[i, j].T
            gw[i, j] = x2.T @ gs.reshape(-1, gs.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bd is not None else None
        return gx, gw, gb

    return record("conv2d_transpose", out, (x, w, b), bw)


def causal_depthwise_conv1d(x, w, b=None) -> Tensor:
    """Per-channel causal convolution along axis -2 of ``(N, L, E)`` with ``w`` of ``(k, E)``."""
    xd, wd = _data(x), _data(w)
    if xd.ndim != 3 or wd.ndim != 2 or xd.shape[-1] != wd.shape[-1]:
        raise ValueError(f"causal_depthwise_conv1d: input {xd.shape} incompatible with kernel {wd.shape}")
    k = wd.shape[0]
    n_len = xd.shape[1]
    xp = np.pad(xd, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.zeros_like(xd)
    for j in range(k):
        out += xp[:, j: j + n_len] * wd[j]
    bd = _data(b) if b is not None else None
    if bd is not None:
        out += bd

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for j in range(k):
            gxp[:, j: j + n_len] += g * wd[j]
            gw[j] = (g * xp[:, j: j + n_len]).sum(axis=(0, 1))
        gb = g.sum(axis=(0, 1)) if bd is not None else None
        return gxp[:, k - 1:].copy(), gw, gb

    return record("causal_depthwise_conv1d", out, (x, w, b), bw)


def linear_scan(log_a, x) -> Tensor:
    """``h[t] = exp(log_a[t]) * h[t-1] + x[t]`` along axis 1 of ``(N, L, ...)``, ``h[-1] = 0``."""
    la, xd = _data(log_a), _data(x)
    if la.shape != xd.shape:
        raise ValueError(f"linear_scan: shapes differ {la.shape} vs {xd.shape}")
    shp = xd.shape
    flat = (shp[0], shp[1], int(np.prod(shp[2:])) if len(shp) > 2 else 1)
    la3, x3 = la.reshape(flat), xd.reshape(flat)
    h3 = _kernels.linear_scan(la3, x3)

    def bw(g):
        gx, gla = _kernels.linear_scan_backward(la3, h3, g.reshape(flat))
        return gla.reshape(shp), gx.reshape(shp)

    return record("linear_scan", h3.reshape(shp), (log_a, x), bw)


def fir(x, h, delay: int = 0) -> Tensor:
    """Filter each row of ``x`` (``(B, L)``) with ``h``: ``full_conv(x, h)[delay: delay + L]``."""
    xd, hd = _data(x), _data(h)
    if xd.ndim != 2 or hd.ndim != 1:
        raise ValueError(f"fir: expected (B, L) signal and 1-D taps, got {xd.shape}, {hd.shape}")
    n, k = xd.shape[1], hd.shape[0]
    if not 0 <= delay < k + n - 1:
        raise ValueError(f"fir: delay {delay} out of range")
    m = n + k - 1
    nfft = 1 << (m - 1).bit_length()
    X = np.fft.rfft(xd, nfft, axis=1)
    H = np.fft.rfft(hd, nfft)
    full = np.fft.irfft(X * H, nfft, axis=1)[:, :m]
    out = full[:, delay: delay + n]
    out = np.pad(out, ((0, 0), (0, n - out.shape[1])))

    def bw(g):
        gfull = np.zeros((xd.shape[0], nfft))
        gfull[:, delay: delay + min(n, m - delay)] = g[:, : min(n, m - delay)]
        G = np.fft.rfft(gfull, nfft, axis=1)
        # correlation with h and with x respectively
        gx = np.fft.irfft(G * np.conj(H), nfft, axis=1)[:, :n]
        gh = np.fft.irfft(G * np.conj(X), nfft, axis=1)[:, :k].sum(axis=0)
        return gx, gh

    return record("fir", out, (x, h), bw)


def frames(x, frame_len: int, hop: int) -> Tensor:
    """Overlapping frames of ``(B, L)`` -> ``(B, T, frame_len)``, ``T = (L - frame_len)//hop + 1``."""
    xd = _data(x)
    n = xd.shape[1]
    if n < frame_len:
        raise ValueError(f"frames: signal of length {n} shorter than frame {frame_len}")
    t = (n - frame_len) // hop + 1
    idx = np.arange(t)[:, None] * hop + np.arange(frame_len)[None, :]

    def bw(g):
        out = np.zeros_like(xd)
        for i in range(t):
            out[:, i * hop: i * hop + frame_len] += g[:, i]
        return (out,)

    return record("frames", xd[:, idx], (x,), bw)


def overlap_add(fr, hop: int) -> Tensor:
    """Inverse layout of :func:`frames`: ``(B, T, W)`` -> ``(B, (T - 1) * hop + W)``."""
    fd = _data(fr)
    bsz, t, w = fd.shape
    out = np.zeros((bsz, (t - 1) * hop + w))
    for i in range(t):
        out[:, i * hop: i * hop + w] += fd[:, i]
    idx = np.arange(t)[:, None] * hop + np.arange(w)[None, :]
    return record("overlap_add", out, (fr,), lambda g: (g[:, idx],))


# -- composites ----------------------------------------------------------------

def sef(y, lambda_sq: float) -> Tensor:
    """Scaled error function loudspeaker model; identity for infinite ``lambda_sq``."""
    if math.isinf(lambda_sq):
        return as_tensor(y) if isinstance(y, Tensor) else Tensor(y)
    scale = math.sqrt(math.pi * lambda_sq / 2.0)
    return mul(erf(mul(y, 1.0 / math.sqrt(2.0 * lambda_sq))), scale)
