"""STFT and inverse STFT as differentiable tensor programs.

Spectra are real tensors of shape ``(B, T, F, 2)`` with (real, imag) on the
last axis. Numerics match :func:`asetm.dsp.stft` / :func:`asetm.dsp.istft`
with centre padding.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..autodiff import Tensor, ops
from ..dsp import StftConfig, window_sumsquare


@lru_cache(maxsize=16)
def _dft_mats(win_len: int, hop_len: int, fft_len: int):
    cfg = StftConfig(win_len, hop_len, fft_len)
    n = cfg.fft_len
    f = np.arange(cfg.n_freq)
    k = np.arange(n)
    ang = 2.0 * np.pi * np.outer(k, f) / n  # (N, F)
    fwd = np.empty((n, cfg.n_freq, 2))
    fwd[..., 0] = np.cos(ang)
    fwd[..., 1] = -np.sin(ang)
    coef = np.full(cfg.n_freq, 2.0)
    coef[0] = 1.0
    if n % 2 == 0:
        coef[-1] = 1.0
    inv = np.empty((cfg.n_freq, 2, n))
    inv[:, 0, :] = (coef[:, None] * np.cos(ang.T)) / n
    inv[:, 1, :] = -(coef[:, None] * np.sin(ang.T)) / n
    if n % 2 == 0:
        inv[-1, 1, :] = 0.0
    inv[0, 1, :] = 0.0
    return fwd.reshape(n, 2 * cfg.n_freq), inv.reshape(2 * cfg.n_freq, n), cfg.window()


def stft_t(x, cfg: StftConfig) -> Tensor:
    """``(B, L)`` waveform -> ``(B, T, F, 2)`` centred STFT."""
    fwd, _, win = _dft_mats(cfg.win_len, cfg.hop_len, cfg.fft_len)
    pad = cfg.win_len // 2
    xp = ops.pad(x, [(0, 0), (pad, pad)], mode="reflect")
    n_frames = cfg.n_frames(x.shape[1], center=True)
    need = (n_frames - 1) * cfg.hop_len + cfg.fft_len
    if xp.shape[1] < need:
        xp = ops.pad(xp, [(0, 0), (0, need - xp.shape[1])])
    fr = ops.frames(xp, cfg.fft_len, cfg.hop_len)
    fr = ops.getitem(fr, (slice(None), slice(0, n_frames)))
    spec = ops.matmul(ops.mul(fr, win), fwd)
    return ops.reshape(spec, (x.shape[0], n_frames, cfg.n_freq, 2))


@lru_cache(maxsize=16)
def _inverse_norm(win_len: int, hop_len: int, fft_len: int, n_frames: int, length: int):
    cfg = StftConfig(win_len, hop_len, fft_len)
    wss = window_sumsquare(cfg, n_frames)
    off = win_len // 2
    wss = wss[off: off + length]
    return np.where(wss < 1e-10, 0.0, 1.0 / np.where(wss < 1e-10, 1.0, wss))


def istft_t(spec, length: int, cfg: StftConfig) -> Tensor:
    """``(B, T, F, 2)`` spectrum -> ``(B, length)`` by weighted overlap-add."""
    _, inv, win = _dft_mats(cfg.win_len, cfg.hop_len, cfg.fft_len)
    b, t, f, _ = spec.shape
    fr = ops.matmul(ops.reshape(spec, (b, t, 2 * f)), inv)
    fr = ops.mul(fr, win)
    y = ops.overlap_add(fr, cfg.hop_len)
    off = cfg.win_len // 2
    if y.shape[1] < off + length:
        raise ValueError(f"{t} frames cannot cover {length} samples")
    y = ops.getitem(y, (slice(None), slice(off, off + length)))
    return ops.mul(y, _inverse_norm(cfg.win_len, cfg.hop_len, cfg.fft_len, t, length))


def magnitude(spec, eps: float = 1e-12) -> Tensor:
    re = ops.getitem(spec, (Ellipsis, 0))
    im = ops.getitem(spec, (Ellipsis, 1))
    return ops.sqrt(ops.add(ops.add(ops.square(re), ops.square(im)), eps))


def phase(spec) -> Tensor:
    return ops.atan2(ops.getitem(spec, (Ellipsis, 1)), ops.getitem(spec, (Ellipsis, 0)))


def polar_to_spec(mag, pha) -> Tensor:
    return ops.stack([ops.mul(mag, ops.cos(pha)), ops.mul(mag, ops.sin(pha))], axis=-1)
