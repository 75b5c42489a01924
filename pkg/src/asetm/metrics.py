"""Objective evaluation: NMSE, STOI, segmental SNR and report files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

NMSE_FLOOR = 1e-12  # -120 dB
SEG_SNR_RANGE = (-10.0, 35.0)

# STOI constants from the original algorithm
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0


def _arr(w) -> np.ndarray:
    return np.asarray(getattr(w, "samples", w), dtype=np.float64)


def nmse(u, v) -> float:
    """Error energy of ``v`` relative to reference ``u`` in dB, floored at -120 dB."""
    u, v = _arr(u), _arr(v)
    if u.shape != v.shape:
        raise ValueError(f"nmse: length mismatch {u.shape} vs {v.shape}")
    eu = float(np.sum(u * u))
    if eu <= 0.0:
        raise ValueError("nmse: reference signal is silent")
    err = float(np.sum((u - v) ** 2))
    return 10.0 * math.log10(max(err, NMSE_FLOOR * eu) / eu)


def seg_snr(clean, processed, frame: int = 512, hop: int = 256, active_db: float = 40.0) -> float:
    """Mean per-frame SNR over frames within ``active_db`` of the loudest clean frame."""
    c, p = _arr(clean), _arr(processed)
    if c.shape != p.shape:
        raise ValueError(f"seg_snr: length mismatch {c.shape} vs {p.shape}")
    if c.size < frame:
        frame = hop = c.size
    n = 1 + (c.size - frame) // hop
    idx = np.arange(n)[:, None] * hop + np.arange(frame)[None, :]
    ec = np.sum(c[idx] ** 2, axis=1)
    en = np.sum((c[idx] - p[idx]) ** 2, axis=1)
    if not np.any(ec > 0):
        raise ValueError("seg_snr: clean signal is silent")
    active = ec > ec.max() * 10.0 ** (-active_db / 10.0)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(ec[active] / np.maximum(en[active], 1e-300))
    return float(np.mean(np.clip(snr, *SEG_SNR_RANGE)))


# -- STOI ------------------------------------------------------------------------

def _third_octave_matrix(fs, nfft, n_bands, min_freq):
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((n_bands, f.size))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _stoi_window():
    # symmetric Hann without the zero end-points, as in the reference code
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _n_frames(length, frame, hop):
    # frame starts 0, hop, ... strictly below length - frame, as in the reference code
    return max(-(-(length - frame) // hop), 0)


def _remove_silent_frames(x, y):
    frame, hop = STOI_FRAME, STOI_FRAME // 2
    win = _stoi_window()
    n = _n_frames(x.size, frame, hop)
    idx = np.arange(n)[:, None] * hop + np.arange(frame)[None, :]
    xf, yf = x[idx] * win, y[idx] * win
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = energy > energy.max() - STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    m = xf.shape[0]
    out_len = (m - 1) * hop + frame if m else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(m):
        xs[i * hop: i * hop + frame] += xf[i]
        ys[i * hop: i * hop + frame] += yf[i]
    return xs, ys


def _stft_mag(x):
    frame, hop = STOI_FRAME, STOI_FRAME // 2
    win = _stoi_window()
    n = _n_frames(x.size, frame, hop)
    idx = np.arange(n)[:, None] * hop + np.arange(frame)[None, :]
    return np.abs(np.fft.rfft(x[idx] * win, STOI_NFFT, axis=1)).T  # (bins, frames)


def stoi(clean, processed, sample_rate_hz: int = 16000) -> float:
    """Short-time objective intelligibility of ``processed`` against ``clean``."""
    x, y = _arr(clean), _arr(processed)
    if x.shape != y.shape:
        raise ValueError(f"stoi: length mismatch {x.shape} vs {y.shape}")
    if sample_rate_hz != STOI_FS:
        g = math.gcd(int(sample_rate_hz), STOI_FS)
        x = resample_poly(x, STOI_FS // g, int(sample_rate_hz) // g)
        y = resample_poly(y, STOI_FS // g, int(sample_rate_hz) // g)
    if x.size < STOI_FRAME:
        raise ValueError("stoi: input too short")
    x, y = _remove_silent_frames(x, y)
    if x.size < STOI_FRAME:
        raise ValueError("stoi: no speech-active content")
    obm = _third_octave_matrix(STOI_FS, STOI_NFFT, STOI_BANDS, STOI_MIN_FREQ)
    xb = np.sqrt(obm @ _stft_mag(x) ** 2)
    yb = np.sqrt(obm @ _stft_mag(y) ** 2)
    n_frames = xb.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(f"stoi: need at least {STOI_SEGMENT} speech-active frames (384 ms), got {n_frames}")
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    eps = np.finfo(float).eps
    scores = []
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = xb[:, m - STOI_SEGMENT: m]
        ys = yb[:, m - STOI_SEGMENT: m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + eps)
        yn = np.minimum(ys * alpha, xs * (1.0 + clip))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yn - yn.mean(axis=1, keepdims=True)
        xc /= np.linalg.norm(xc, axis=1, keepdims=True) + eps
        yc /= np.linalg.norm(yc, axis=1, keepdims=True) + eps
        scores.append(np.sum(xc * yc, axis=1))
    return float(np.mean(scores))


# -- reports -----------------------------------------------------------------------

REPORT_FIELDS = ("utt_id", "task", "t60", "lambda_sq", "nmse_db", "stoi", "seg_snr_db")
SPECTRUM_FIELDS = ("freq_hz", "clean_db", "degraded_db", "enhanced_db")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, utt_id, task, t60, lambda_sq, clean, enhanced, sample_rate_hz=16000) -> dict:
        row = {
            "utt_id": utt_id, "task": task, "t60": float(t60), "lambda_sq": float(lambda_sq),
            "nmse_db": nmse(clean, enhanced),
            "stoi": stoi(clean, enhanced, sample_rate_hz),
            "seg_snr_db": seg_snr(clean, enhanced),
        }
        self.rows.append(row)
        return row

    def mean(self, key: str) -> float:
        if not self.rows:
            raise ValueError("empty report")
        return float(np.mean([r[key] for r in self.rows]))

    @property
    def nmse_db(self) -> float:
        return self.mean("nmse_db")

    @property
    def stoi(self) -> float:
        return self.mean("stoi")

    @property
    def seg_snr_db(self) -> float:
        return self.mean("seg_snr_db")

    def grouped(self, keys=("t60", "lambda_sq")) -> dict:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(tuple(r[k] for k in keys), []).append(r)
        return {k: EvalReport(v) for k, v in groups.items()}

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in REPORT_FIELDS})


def write_spectrum_csv(path, freqs, clean_db, degraded_db, enhanced_db) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_FIELDS)
        for row in zip(freqs, clean_db, degraded_db, enhanced_db):
            w.writerow([f"{v:.6f}" for v in row])
