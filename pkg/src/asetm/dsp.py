"""Signal primitives shared by the rest of the package.

Everything here works on plain float64 numpy arrays; :class:`Waveform` only
tags samples with a rate so that modules can check they agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

SPECTRAL_FLOOR = 1e-12
FFT_CONV_THRESHOLD = 64


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {arr.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class StftConfig:
    """STFT geometry. Defaults are 400/100/400 at 16 kHz."""

    win_len: int = 400
    hop_len: int = 100
    fft_len: int = 400
    window_kind: str = "hann"

    def __post_init__(self):
        if self.window_kind.lower() != "hann":
            raise ValueError(f"unsupported window {self.window_kind!r}")
        if not (0 < self.hop_len <= self.win_len <= self.fft_len):
            raise ValueError(
                f"need 0 < hop_len <= win_len <= fft_len, got {self.hop_len}, {self.win_len}, {self.fft_len}"
            )

    @property
    def n_freq(self) -> int:
        return self.fft_len // 2 + 1

    def window(self) -> np.ndarray:
        w = np.zeros(self.fft_len)
        w[: self.win_len] = hann_window(self.win_len)
        return w

    def n_frames(self, n_samples: int, center: bool = True) -> int:
        if center:
            return n_samples // self.hop_len + 1
        if n_samples < self.win_len:
            raise ValueError(f"signal of {n_samples} samples shorter than window {self.win_len}")
        return (n_samples - self.win_len) // self.hop_len + 1


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray  # (T, F) complex
    config: StftConfig = field(default_factory=StftConfig)
    center: bool = True

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[1] != self.config.n_freq:
            raise ValueError(f"expected (T, {self.config.n_freq}) frames, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "frames", arr)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.frames)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window ``0.5 * (1 - cos(2 pi k / length))``."""
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    k = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / length))


def _as_array(w) -> tuple[np.ndarray, int | None]:
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate_hz
    return np.asarray(w, dtype=np.float64), None


def frame_signal(x: np.ndarray, cfg: StftConfig, center: bool = True) -> np.ndarray:
    """Slice ``x`` into (T, fft_len) frames, reflect-padding by win/2 if centred."""
    x = np.asarray(x, dtype=np.float64)
    if center:
        pad = cfg.win_len // 2
        if x.shape[0] <= pad:
            raise ValueError(f"signal of {x.shape[0]} samples too short for reflect padding of {pad}")
        x = np.pad(x, (pad, pad), mode="reflect")
    n_frames = cfg.n_frames(x.shape[0] - (2 * (cfg.win_len // 2) if center else 0), center)
    need = (n_frames - 1) * cfg.hop_len + cfg.fft_len
    if x.shape[0] < need:
        x = np.pad(x, (0, need - x.shape[0]))
    idx = np.arange(n_frames)[:, None] * cfg.hop_len + np.arange(cfg.fft_len)[None, :]
    return x[idx]


def stft(w, cfg: StftConfig | None = None, center_pad: bool = True) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x, _ = _as_array(w)
    if not center_pad and x.shape[0] < cfg.win_len:
        raise ValueError(f"input of {x.shape[0]} samples shorter than window {cfg.win_len}")
    frames = frame_signal(x, cfg, center_pad) * cfg.window()[None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_len, axis=1), cfg, center_pad)


def window_sumsquare(cfg: StftConfig, n_frames: int) -> np.ndarray:
    win = cfg.window()
    total = (n_frames - 1) * cfg.hop_len + cfg.fft_len
    out = np.zeros(total)
    for t in range(n_frames):
        out[t * cfg.hop_len: t * cfg.hop_len + cfg.fft_len] += win ** 2
    return out


def istft(spec: ComplexSpectrogram, out_len: int, sample_rate_hz: int = 16000) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft` (synthesis window = analysis window)."""
    cfg = spec.config
    n_frames = spec.frames.shape[0]
    frames = np.fft.irfft(spec.frames, n=cfg.fft_len, axis=1) * cfg.window()[None, :]
    total = (n_frames - 1) * cfg.hop_len + cfg.fft_len
    y = np.zeros(total)
    for t in range(n_frames):
        y[t * cfg.hop_len: t * cfg.hop_len + cfg.fft_len] += frames[t]
    wss = window_sumsquare(cfg, n_frames)
    offset = cfg.win_len // 2 if spec.center else 0
    y = y[offset: offset + out_len]
    wss = wss[offset: offset + out_len]
    if y.shape[0] < out_len:
        raise ValueError(f"{n_frames} frames cannot cover {out_len} samples")
    zero = wss < 1e-10
    if np.any(zero & (np.abs(y) > 0)):
        raise RuntimeError("window overlap sum vanishes where signal energy is present")
    y = np.where(zero, 0.0, y / np.where(zero, 1.0, wss))
    return Waveform(y, sample_rate_hz)


def convolve(x, h, mode: str = "full", method: str = "auto") -> np.ndarray:
    """Linear convolution. ``mode='same_leading'`` keeps the first len(x) samples."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.size == 0 or h.size == 0:
        raise ValueError("convolve needs non-empty inputs")
    if method == "auto":
        method = "fft" if min(x.size, h.size) > FFT_CONV_THRESHOLD else "direct"
    if method == "direct":
        y = np.convolve(x, h)
    elif method == "fft":
        n = x.size + h.size - 1
        nfft = 1 << (n - 1).bit_length()
        y = np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)[:n]
    else:
        raise ValueError(f"unknown method {method!r}")
    mode = mode.lower()
    if mode == "full":
        return y
    if mode in ("same_leading", "sameleading"):
        return y[: x.size]
    raise ValueError(f"unknown mode {mode!r}")


def power_spectrum_db(w, cfg: StftConfig | None = None) -> np.ndarray:
    cfg = cfg or StftConfig()
    x, _ = _as_array(w)
    if x.size == 0:
        raise ValueError("empty signal")
    if x.size < cfg.win_len:
        x = np.pad(x, (0, cfg.win_len - x.size))
    spec = stft(x, cfg, center_pad=False).frames
    return 10.0 * np.log10(np.maximum(np.mean(np.abs(spec) ** 2, axis=0), SPECTRAL_FLOOR))


def bin_frequencies(cfg: StftConfig, sample_rate_hz: int) -> np.ndarray:
    return np.arange(cfg.n_freq) * sample_rate_hz / cfg.fft_len


def resample(w: Waveform, target_hz: int) -> Waveform:
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    if target_hz == w.sample_rate_hz:
        return w
    from math import gcd

    g = gcd(int(target_hz), w.sample_rate_hz)
    up, down = int(target_hz) // g, w.sample_rate_hz // g
    y = sps.resample_poly(w.samples, up, down, padtype="line")
    n_out = int(round(len(w) * target_hz / w.sample_rate_hz))
    if y.shape[0] < n_out:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return Waveform(y[:n_out], target_hz)


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV is supported, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(x, rate)


def write_wav(path, w: Waveform, fmt: str = "float32") -> Path:
    path = Path(path)
    if fmt == "pcm16":
        data = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    elif fmt == "float32":
        # float WAVs keep peaks above 1 (noisy mixtures can exceed full scale)
        data = w.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), w.sample_rate_hz, data)
    return path
