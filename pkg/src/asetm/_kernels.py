"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a ``@njit`` version and a pure-numpy version with
the same signature. The numpy path is used when numba cannot be imported or
when the environment variable ``ASETM_DISABLE_NUMBA`` is set to a truthy
value before import. ``use_backend`` switches at runtime (tests, benchmark).
"""

from __future__ import annotations

import contextlib
import math
import os

import numpy as np

_DISABLED = os.environ.get("ASETM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by ASETM_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised by env flag in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


_backend = "numba" if HAVE_NUMBA else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


# ---------------------------------------------------------------------------
# Linear recurrence  h[t] = exp(log_a[t]) * h[t-1] + x[t]  along axis 1.
# Arrays are reshaped to (batch, length, width) by the callers.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _scan_numba(log_a, x):
    nb, nl, nw = x.shape
    h = np.empty_like(x)
    for b in range(nb):
        for w in range(nw):
            h[b, 0, w] = x[b, 0, w]
        for t in range(1, nl):
            for w in range(nw):
                h[b, t, w] = math.exp(log_a[b, t, w]) * h[b, t - 1, w] + x[b, t, w]
    return h


@njit(cache=True)
def _scan_bwd_numba(log_a, h, g):
    nb, nl, nw = h.shape
    gx = np.empty_like(h)
    gla = np.zeros_like(h)
    for b in range(nb):
        for w in range(nw):
            gx[b, nl - 1, w] = g[b, nl - 1, w]
        for t in range(nl - 2, -1, -1):
            for w in range(nw):
                gx[b, t, w] = g[b, t, w] + math.exp(log_a[b, t + 1, w]) * gx[b, t + 1, w]
        for t in range(1, nl):
            for w in range(nw):
                gla[b, t, w] = gx[b, t, w] * math.exp(log_a[b, t, w]) * h[b, t - 1, w]
    return gx, gla


_CHUNK = 32


def _scan_numpy(log_a, x, chunk=_CHUNK):
    """Blocked scan: closed form inside each chunk, state carried across chunks."""
    nb, nl, nw = x.shape
    h = np.empty_like(x)
    state = np.zeros((nb, nw))
    for start in range(0, nl, chunk):
        stop = min(start + chunk, nl)
        la = log_a[:, start:stop]
        cum = np.cumsum(la, axis=1)  # (nb, q, nw)
        q = stop - start
        # weight[t, s] = exp(cum[t] - cum[s]) for s <= t
        diff = cum[:, :, None, :] - cum[:, None, :, :]
        mask = np.tril(np.ones((q, q), dtype=bool))[None, :, :, None]
        wts = np.where(mask, np.exp(np.where(mask, diff, 0.0)), 0.0)
        blk = np.einsum("btsw,bsw->btw", wts, x[:, start:stop])
        blk += np.exp(cum) * state[:, None, :]
        h[:, start:stop] = blk
        state = blk[:, -1]
    return h


def _scan_bwd_numpy(log_a, h, g):
    # reverse recurrence gx[t] = g[t] + a[t+1] gx[t+1] is the same scan, flipped
    shifted = np.zeros_like(log_a)
    shifted[:, :-1] = log_a[:, 1:]
    gx = _scan_numpy(shifted[:, ::-1], g[:, ::-1])[:, ::-1]
    gla = np.zeros_like(h)
    gla[:, 1:] = gx[:, 1:] * np.exp(log_a[:, 1:]) * h[:, :-1]
    return np.ascontiguousarray(gx), gla


def linear_scan(log_a: np.ndarray, x: np.ndarray) -> np.ndarray:
    log_a = np.ascontiguousarray(log_a, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _backend == "numba":
        return _scan_numba(log_a, x)
    return _scan_numpy(log_a, x)


def linear_scan_backward(log_a: np.ndarray, h: np.ndarray, g: np.ndarray):
    log_a = np.ascontiguousarray(log_a, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if _backend == "numba":
        return _scan_bwd_numba(log_a, h, g)
    return _scan_bwd_numpy(log_a, h, g)


# ---------------------------------------------------------------------------
# Selective scan  h[t] = exp(-delta[t] * rate) h[t-1] + delta[t] u[t] (x) b[t],
# y[t] = h[t] c[t] + d u[t].  u (N, L, H, P), delta (N, L, H), rate (H, S),
# b/c (N, L, S), d (H,).  The state history is kept for the backward pass.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ssm_fwd_numba(u, delta, rate, b, c, d):
    nn, nl, nh, npp = u.shape
    ns = b.shape[2]
    y = np.empty_like(u)
    hs = np.empty((nn, nl, nh, npp, ns))
    for n in range(nn):
        for t in range(nl):
            for h in range(nh):
                dt = delta[n, t, h]
                for s in range(ns):
                    a = math.exp(-dt * rate[h, s])
                    bb = dt * b[n, t, s]
                    for q in range(npp):
                        prev = hs[n, t - 1, h, q, s] if t > 0 else 0.0
                        hs[n, t, h, q, s] = a * prev + bb * u[n, t, h, q]
                for q in range(npp):
                    acc = d[h] * u[n, t, h, q]
                    for s in range(ns):
                        acc += hs[n, t, h, q, s] * c[n, t, s]
                    y[n, t, h, q] = acc
    return y, hs


@njit(cache=True)
def _ssm_bwd_numba(u, delta, rate, b, c, d, hs, g):
    nn, nl, nh, npp = u.shape
    ns = b.shape[2]
    gu = np.zeros_like(u)
    gdelta = np.zeros_like(delta)
    grate = np.zeros_like(rate)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    gd = np.zeros_like(d)
    gs = np.zeros((nh, npp, ns))
    for n in range(nn):
        gs[:] = 0.0
        for t in range(nl - 1, -1, -1):
            for h in range(nh):
                dt = delta[n, t, h]
                for q in range(npp):
                    gy = g[n, t, h, q]
                    gd[h] += gy * u[n, t, h, q]
                    gu[n, t, h, q] += gy * d[h]
                    for s in range(ns):
                        gs[h, q, s] += gy * c[n, t, s]
                        gc[n, t, s] += gy * hs[n, t, h, q, s]
                for s in range(ns):
                    a = math.exp(-dt * rate[h, s])
                    ga = 0.0
                    for q in range(npp):
                        gx = gs[h, q, s]
                        uq = u[n, t, h, q]
                        gb[n, t, s] += gx * dt * uq
                        gu[n, t, h, q] += gx * dt * b[n, t, s]
                        gdelta[n, t, h] += gx * uq * b[n, t, s]
                        if t > 0:
                            ga += gx * hs[n, t - 1, h, q, s]
                        gs[h, q, s] = gx * a
                    gla = ga * a
                    gdelta[n, t, h] -= gla * rate[h, s]
                    grate[h, s] -= gla * dt
    return gu, gdelta, grate, gb, gc, gd


def _ssm_fwd_numpy(u, delta, rate, b, c, d):
    nn, nl, nh, npp = u.shape
    ns = b.shape[2]
    la = np.ascontiguousarray(np.broadcast_to(
        -delta[:, :, :, None, None] * rate[None, None, :, None, :], (nn, nl, nh, npp, ns)))
    xin = (delta[..., None] * u)[..., None] * b[:, :, None, None, :]
    flat = (nn, nl, nh * npp * ns)
    hs = _scan_numpy(la.reshape(flat), xin.reshape(flat)).reshape(nn, nl, nh, npp, ns)
    y = np.einsum("nlhps,nls->nlhp", hs, c) + d[:, None] * u
    return y, hs


def _ssm_bwd_numpy(u, delta, rate, b, c, d, hs, g):
    nn, nl, nh, npp = u.shape
    ns = b.shape[2]
    flat = (nn, nl, nh * npp * ns)
    la = np.ascontiguousarray(np.broadcast_to(
        -delta[:, :, :, None, None] * rate[None, None, :, None, :], (nn, nl, nh, npp, ns)))
    gh = g[..., None] * c[:, :, None, None, :]
    gc = np.einsum("nlhp,nlhps->nls", g, hs)
    gd = np.einsum("nlhp,nlhp->h", g, u)
    gx, gla = _scan_bwd_numpy(la.reshape(flat), hs.reshape(flat), gh.reshape(flat))
    gx = gx.reshape(hs.shape)
    t = gla.reshape(hs.shape).sum(axis=3)  # (N, L, H, S)
    du = delta[..., None] * u
    gdu = np.einsum("nlhps,nls->nlhp", gx, b)
    gb = np.einsum("nlhps,nlhp->nls", gx, du)
    gu = g * d[:, None] + gdu * delta[..., None]
    gdelta = np.einsum("nlhp,nlhp->nlh", gdu, u) - np.einsum("nlhs,hs->nlh", t, rate)
    grate = -np.einsum("nlhs,nlh->hs", t, delta)
    return gu, gdelta, grate, gb, gc, gd


def _c(*arrs):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrs)


def ssm_forward(u, delta, rate, b, c, d):
    """Returns ``(y, state_history)``; ``rate`` is the positive decay rate ``(H, S)``."""
    args = _c(u, delta, rate, b, c, d)
    if _backend == "numba":
        return _ssm_fwd_numba(*args)
    return _ssm_fwd_numpy(*args)


def ssm_backward(u, delta, rate, b, c, d, hs, g):
    """Gradients with respect to ``(u, delta, rate, b, c, d)``."""
    args = _c(u, delta, rate, b, c, d, hs, g)
    if _backend == "numba":
        return _ssm_bwd_numba(*args)
    return _ssm_bwd_numpy(*args)


# ---------------------------------------------------------------------------
# Image-source accumulation: add a Hann-windowed sinc per image into the RIR.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _accumulate_images_numba(out, delays, gains, half_width):
    n_taps = out.shape[0]
    width = 2 * half_width + 1
    for i in range(delays.shape[0]):
        d = delays[i]
        base = int(math.floor(d)) - half_width
        for k in range(width):
            n = base + k
            if n < 0 or n >= n_taps:
                continue
            t = n - d
            if abs(t) > half_width:
                continue
            if t == 0.0:
                s = 1.0
            else:
                s = math.sin(math.pi * t) / (math.pi * t)
            win = 0.5 * (1.0 + math.cos(math.pi * t / (half_width + 1)))
            out[n] += gains[i] * s * win


def _accumulate_images_numpy(out, delays, gains, half_width, block=8192):
    n_taps = out.shape[0]
    offs = np.arange(-half_width, half_width + 1)
    for start in range(0, delays.shape[0], block):
        d = delays[start:start + block]
        g = gains[start:start + block]
        n = np.floor(d).astype(np.int64)[:, None] + offs[None, :]
        t = n - d[:, None]
        vals = np.sinc(t) * 0.5 * (1.0 + np.cos(np.pi * t / (half_width + 1)))
        vals[np.abs(t) > half_width] = 0.0
        vals *= g[:, None]
        ok = (n >= 0) & (n < n_taps)
        np.add.at(out, n[ok], vals[ok])


def accumulate_images(n_taps: int, delays: np.ndarray, gains: np.ndarray, half_width: int) -> np.ndarray:
    out = np.zeros(n_taps)
    delays = np.ascontiguousarray(delays, dtype=np.float64)
    gains = np.ascontiguousarray(gains, dtype=np.float64)
    if _backend == "numba":
        _accumulate_images_numba(out, delays, gains, int(half_width))
    else:
        _accumulate_images_numpy(out, delays, gains, int(half_width))
    return out


# ---------------------------------------------------------------------------
# Filtered-x LMS family: one pass over the signal, sample by sample.
#   variant 0 = FxLMS, 1 = FxNLMS, 2 = THF-FxLMS
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sef_scalar(y, lam_sq):
    if not math.isfinite(lam_sq):
        return y
    s = math.sqrt(2.0 * lam_sq)
    return math.sqrt(math.pi * lam_sq / 2.0) * math.erf(y / s)


@njit(cache=True)
def _fxlms_numba(x, d, target, s_true, s_hat, w, mu, variant, lam_sq, lam_sq_est, eps, div_limit):
    n = x.shape[0]
    lw = w.shape[0]
    ls = s_true.shape[0]
    lh = s_hat.shape[0]
    y = np.zeros(n)
    fy = np.zeros(n)
    eh = np.zeros(n)
    xf = np.zeros(n)  # filtered reference x'(n)
    g = np.zeros(n)   # reference weighted by modeled saturation slope
    status = 0
    for i in range(n):
        acc = 0.0
        for j in range(min(lw, i + 1)):
            acc += w[j] * x[i - j]
        y[i] = acc
        fy[i] = _sef_scalar(acc, lam_sq)
        a = 0.0
        for k in range(min(ls, i + 1)):
            a += s_true[k] * fy[i - k]
        eh[i] = d[i] + a
        err = eh[i] - target[i]
        if variant == 2 and math.isfinite(lam_sq_est):
            g[i] = math.exp(-acc * acc / (2.0 * lam_sq_est)) * x[i]
        else:
            g[i] = x[i]
        f = 0.0
        for k in range(min(lh, i + 1)):
            f += s_hat[k] * g[i - k]
        xf[i] = f
        step = mu
        if variant == 1:
            pw = 0.0
            for j in range(min(lw, i + 1)):
                pw += xf[i - j] * xf[i - j]
            step = mu / (pw + eps)
        norm = 0.0
        for j in range(min(lw, i + 1)):
            w[j] -= step * err * xf[i - j]
            norm += w[j] * w[j]
        if not math.isfinite(norm) or norm > div_limit * div_limit:
            status = 1
            break
    return y, eh, status


def _fxlms_numpy(x, d, target, s_true, s_hat, w, mu, variant, lam_sq, lam_sq_est, eps, div_limit):
    from math import erf

    n = x.shape[0]
    lw, ls, lh = w.shape[0], s_true.shape[0], s_hat.shape[0]
    y = np.zeros(n)
    eh = np.zeros(n)
    xbuf = np.zeros(lw)
    fbuf = np.zeros(ls)
    gbuf = np.zeros(lh)
    xfbuf = np.zeros(lw)
    finite_lam = math.isfinite(lam_sq)
    slim = math.sqrt(math.pi * lam_sq / 2.0) if finite_lam else 0.0
    sden = math.sqrt(2.0 * lam_sq) if finite_lam else 1.0
    status = 0
    for i in range(n):
        xbuf[1:] = xbuf[:-1]
        xbuf[0] = x[i]
        acc = float(w @ xbuf)
        y[i] = acc
        fbuf[1:] = fbuf[:-1]
        fbuf[0] = slim * erf(acc / sden) if finite_lam else acc
        eh[i] = d[i] + float(s_true @ fbuf)
        err = eh[i] - target[i]
        if variant == 2 and math.isfinite(lam_sq_est):
            gv = math.exp(-acc * acc / (2.0 * lam_sq_est)) * x[i]
        else:
            gv = x[i]
        gbuf[1:] = gbuf[:-1]
        gbuf[0] = gv
        xfbuf[1:] = xfbuf[:-1]
        xfbuf[0] = float(s_hat @ gbuf)
        step = mu
        if variant == 1:
            step = mu / (float(xfbuf @ xfbuf) + eps)
        w -= step * err * xfbuf
        norm = float(w @ w)
        if not math.isfinite(norm) or norm > div_limit * div_limit:
            status = 1
            break
    return y, eh, status


def fxlms_loop(x, d, target, s_true, s_hat, w, mu, variant, lam_sq, lam_sq_est, eps=1e-8, div_limit=1e6):
    """Run the adaptive loop in place on ``w``; returns (y, eh, status)."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (x, d, target, s_true, s_hat)]
    if _backend == "numba":
        return _fxlms_numba(*args, w, float(mu), int(variant), float(lam_sq), float(lam_sq_est),
                            float(eps), float(div_limit))
    return _fxlms_numpy(*args, w, float(mu), int(variant), float(lam_sq), float(lam_sq_est),
                        float(eps), float(div_limit))


# ---------------------------------------------------------------------------
# NLMS system identification (secondary-path estimate).
# ---------------------------------------------------------------------------

@njit(cache=True)
def _nlms_ident_numba(u, target, w, mu, eps):
    n = u.shape[0]
    lw = w.shape[0]
    for i in range(n):
        acc = 0.0
        pw = 0.0
        for j in range(min(lw, i + 1)):
            acc += w[j] * u[i - j]
            pw += u[i - j] * u[i - j]
        e = target[i] - acc
        step = mu / (pw + eps)
        for j in range(min(lw, i + 1)):
            w[j] += step * e * u[i - j]


def _nlms_ident_numpy(u, target, w, mu, eps):
    lw = w.shape[0]
    buf = np.zeros(lw)
    for i in range(u.shape[0]):
        buf[1:] = buf[:-1]
        buf[0] = u[i]
        e = target[i] - float(w @ buf)
        w += (mu / (float(buf @ buf) + eps)) * e * buf


def nlms_identify(u, target, w, mu, eps=1e-8):
    u = np.ascontiguousarray(u, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    if _backend == "numba":
        _nlms_ident_numba(u, target, w, float(mu), float(eps))
    else:
        _nlms_ident_numpy(u, target, w, float(mu), float(eps))
    return w
