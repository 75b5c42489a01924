"""Upper bounds for loudspeaker denoising on a generated dataset.

The loudspeaker has to place -P*n at the modification mic through S. This
script fits, on the train split, the best linear filter g from a noise
estimate e to the loudspeaker (min ||P*n + S*g*e||^2) and reports the test
NMSE/STOI it achieves, for e = the true noise and e = an ideal-ratio-mask
estimate. A trained model has to do better than the mask to beat that row.

    python benchmarks/denoise_oracle.py DATA_DIR
"""

import argparse

import numpy as np
from scipy.linalg import solve_toeplitz

from asetm.config import load_config
from asetm.data import RirCache, load_audio, read_manifest
from asetm.dsp import ComplexSpectrogram, StftConfig, convolve, istft, stft
from asetm.metrics import nmse, stoi


def _filt(a, h):
    return convolve(a, h)[: a.size]


def load_split(root, split):
    out = []
    for e in read_manifest(root):
        if e.split == split:
            out.append((load_audio(e, root, "x"), load_audio(e, root, "s"), load_audio(e, root, "c")))
    return out


def irm_estimate(x, s, cfg):
    X, N = stft(x, cfg).frames, stft(x - s, cfg).frames
    mask = np.minimum(np.abs(N) / np.maximum(np.abs(X), 1e-9), 1.0)
    return istft(ComplexSpectrogram(X * mask, cfg), x.size).samples


def fit_filter(items, est, P, S, taps, delay):
    # normal equations of the Toeplitz system, taps at lags -delay..taps-delay-1
    R, r = np.zeros(taps), np.zeros(taps)
    for x, s, _ in items:
        u, t = _filt(est(x, s), S), -_filt(x - s, P)
        nfft = 1 << int(np.ceil(np.log2(2 * u.size)))
        U, T = np.fft.rfft(u, nfft), np.fft.rfft(t, nfft)
        R += np.fft.irfft(U * np.conj(U), nfft)[:taps]
        r += np.roll(np.fft.irfft(T * np.conj(U), nfft), delay)[:taps]
    R[0] *= 1 + 1e-6
    return solve_toeplitz(R, r)


def score(items, est, g, delay, P, S, fs):
    rows = []
    for x, s, c in items:
        y = np.roll(np.r_[_filt(est(x, s), g), np.zeros(delay)], -delay)[: x.size]
        d = _filt(x, P)
        eh = d + _filt(y, S)
        rows.append((nmse(c, d), stoi(c, d, fs), nmse(c, eh), stoi(c, eh, fs)))
    return np.mean(rows, axis=0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data", help="dataset directory written by `asetm gen-data`")
    ap.add_argument("--taps", type=int, nargs="+", default=[512, 2048])
    args = ap.parse_args(argv)
    cfg = load_config(f"{args.data}/config.ini")
    t60s = sorted({e.meta["t60"] for e in read_manifest(args.data)})
    if len(t60s) != 1:
        raise SystemExit("oracle assumes a single-room dataset")
    P, S = (np.asarray(getattr(p, "taps", p)) for p in RirCache(cfg, f"{args.data}/rirs").paths(t60s[0]))
    train, test = load_split(args.data, "train"), load_split(args.data, "test")
    stft_cfg = StftConfig(cfg.stft.win_len, cfg.stft.hop_len, cfg.stft.fft_len)
    fs = cfg.data.sample_rate_hz
    estimates = {"true noise": lambda x, s: x - s, "ratio mask": lambda x, s: irm_estimate(x, s, stft_cfg)}
    print(f"{'estimate':<12} {'taps':>5}  {'nmse y=0':>9} {'nmse':>8} {'gain':>6}  {'stoi y=0':>8} {'stoi':>6}")
    for name, est in estimates.items():
        for taps in args.taps:
            delay = taps // 2 if taps > 512 else 0
            g = fit_filter(train, est, P, S, taps, delay)
            n0, s0, n1, s1 = score(test, est, g, delay, P, S, fs)
            print(f"{name:<12} {taps:>5}  {n0:>9.2f} {n1:>8.2f} {n0 - n1:>6.2f}  {s0:>8.3f} {s1:>6.3f}")


if __name__ == "__main__":
    main()
