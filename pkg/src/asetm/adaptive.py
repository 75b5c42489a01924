"""Filtered-x adaptive controllers configured for speech enhancement.

The controller sees the reference-mic signal ``x`` and drives the
modification-mic field ``eh = d + S * sef(y)`` towards a target. With
``error_source="oracle"`` the error is ``eh - c`` (the simulator knows the
clean target); with ``"mic"`` only the physical mic is available and the
target is silence, i.e. classical noise cancellation.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .acoustics import AcousticScene, Rir, sef
from .dsp import Waveform, convolve

NMSE_BLOCK = 1600
DEFAULT_FILTER_LEN = 512
DEFAULT_MU = {"fxlms": 1e-4, "fxnlms": 1e-2, "thf": 1e-4}
DIVERGENCE_NORM = 1e6


class Variant(enum.IntEnum):
    FXLMS = 0
    FXNLMS = 1
    THF = 2

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, Variant):
            return name
        key = str(name).lower().replace("-", "").replace("_", "")
        table = {"fxlms": cls.FXLMS, "fxnlms": cls.FXNLMS, "thf": cls.THF, "thffxlms": cls.THF}
        if key not in table:
            raise ValueError(f"unknown adaptive variant {name!r}")
        return table[key]


@dataclass
class AdaptiveFilterState:
    shat: np.ndarray
    weights: np.ndarray = None
    mu: float = 1e-4
    variant: Variant = Variant.FXLMS
    lambda_sq_est: float = math.inf

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.shat = np.asarray(self.shat, dtype=np.float64).copy()
        if self.weights is None:
            self.weights = np.zeros(DEFAULT_FILTER_LEN)
        self.weights = np.asarray(self.weights, dtype=np.float64).copy()
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValueError("control filter needs at least one tap")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("control filter weights must be finite")
        if not self.mu >= 0 or not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite and non-negative, got {self.mu}")
        if not self.lambda_sq_est > 0:
            raise ValueError("lambda_sq_est must be positive or inf")

    @classmethod
    def fresh(cls, shat, n_taps: int = DEFAULT_FILTER_LEN, variant="fxlms", mu: float | None = None,
              lambda_sq_est: float = math.inf) -> "AdaptiveFilterState":
        v = Variant.parse(variant)
        mu = DEFAULT_MU[v.name.lower()] if mu is None else mu
        return cls(shat, np.zeros(n_taps), mu, v, lambda_sq_est)


@dataclass
class AdaptiveResult:
    y: np.ndarray
    eh: np.ndarray
    d: np.ndarray
    nmse_curve: np.ndarray
    diverged: bool
    weights: np.ndarray = field(repr=False, default=None)


def block_nmse(reference: np.ndarray, estimate: np.ndarray, block: int = NMSE_BLOCK,
               normaliser: np.ndarray | None = None) -> np.ndarray:
    """Per-block error energy of ``estimate`` against ``reference`` in dB.

    ``normaliser`` supplies the denominator signal when the reference itself
    is silent (noise-cancellation mode uses the primary field).
    """
    ref = np.asarray(reference)
    est = np.asarray(estimate)
    den_sig = ref if normaliser is None else np.asarray(normaliser)
    n_blocks = ref.size // block
    out = np.empty(n_blocks)
    for b in range(n_blocks):
        sl = slice(b * block, (b + 1) * block)
        num = float(np.sum((ref[sl] - est[sl]) ** 2))
        den = float(np.sum(den_sig[sl] ** 2))
        out[b] = 10.0 * math.log10(max(num, 1e-300) / den) if den > 0 else math.nan
    return out


def fxlms_run(x, target, scene: AcousticScene, rirs, state: AdaptiveFilterState,
              error_source: str = "oracle") -> AdaptiveResult:
    """Run the adaptive controller sample by sample; ``state.weights`` is updated in place."""
    xs = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    ts = np.asarray(getattr(target, "samples", target), dtype=np.float64)
    if xs.shape != ts.shape:
        raise ValueError(f"x and target lengths differ: {xs.shape} vs {ts.shape}")
    primary, secondary = rirs
    if state.shat.size > scene.rir_len:
        raise ValueError(f"shat has {state.shat.size} taps, more than the scene's {scene.rir_len}")
    d = convolve(xs, primary.taps, mode="same_leading")
    if error_source == "oracle":
        tgt = ts
    elif error_source == "mic":
        tgt = np.zeros_like(ts)
    else:
        raise ValueError(f"error_source must be 'oracle' or 'mic', got {error_source!r}")
    y, eh, status = _kernels.fxlms_loop(xs, d, tgt, secondary.taps, state.shat, state.weights, state.mu,
                                        int(state.variant), scene.lambda_sq, state.lambda_sq_est,
                                        div_limit=DIVERGENCE_NORM)
    silent = not np.any(tgt)
    curve = block_nmse(tgt, eh, normaliser=d if silent else None)
    return AdaptiveResult(y, eh, d, curve, bool(status), state.weights.copy())


def write_curve_csv(path, curve: np.ndarray, block: int = NMSE_BLOCK, sample_rate_hz: int = 16000) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "time_s", "nmse_db"])
        for i, v in enumerate(curve):
            w.writerow([i, f"{(i + 1) * block / sample_rate_hz:.4f}", f"{v:.6f}"])


@dataclass
class SecondaryEstimate:
    taps: np.ndarray
    misalignment: float


def estimate_secondary(scene: AcousticScene, rirs, probe_len: int, seed: int = 0, n_taps: int | None = None,
                       mu: float = 0.5, amplitude: float = 1.0, init=None) -> SecondaryEstimate:
    """Identify the loudspeaker-to-mic path from a white-noise probe with NLMS.

    The probe passes through the saturation and the true secondary path; the
    reported misalignment is ``|shat - s|^2 / |s|^2`` over the estimated taps.
    """
    _, secondary = rirs
    n_taps = n_taps or len(secondary)
    if probe_len < n_taps:
        raise ValueError(f"probe_len {probe_len} shorter than the {n_taps} taps wanted")
    rng = np.random.default_rng(seed)
    u = amplitude * rng.standard_normal(probe_len)
    m = convolve(sef(u, scene.lambda_sq), secondary.taps, mode="same_leading")
    w = np.zeros(n_taps) if init is None else np.array(init, dtype=np.float64)
    if w.shape != (n_taps,):
        raise ValueError(f"init must have {n_taps} taps")
    _kernels.nlms_identify(u, m, w, mu)
    s = np.zeros(n_taps)
    k = min(n_taps, len(secondary))
    s[:k] = secondary.taps[:k]
    mis = float(np.sum((w - s) ** 2) / np.sum(s ** 2))
    return SecondaryEstimate(w, mis)


def least_squares_filter(x: np.ndarray, d: np.ndarray, target: np.ndarray, secondary: Rir, n_taps: int,
                         rcond: float = 1e-10, fit_from: int = 0) -> np.ndarray:
    """Offline minimum-norm optimum ``w`` for the linear plant: min |d + S*(w*x) - target|^2.

    Only samples from ``fit_from`` on enter the fit, so start-up transients
    of the filtered reference can be excluded.
    """
    xf = convolve(np.asarray(x, dtype=np.float64), secondary.taps, mode="same_leading")
    n = xf.size
    if not 0 <= fit_from < n:
        raise ValueError(f"fit_from must lie in [0, {n})")
    cols = np.zeros((n, n_taps))
    for j in range(n_taps):
        cols[j:, j] = xf[: n - j]
    rhs = np.asarray(target) - np.asarray(d)
    w, *_ = np.linalg.lstsq(cols[fit_from:], rhs[fit_from:], rcond=rcond)
    return w


def frequency_response(w: np.ndarray, freq_hz: float, sample_rate_hz: int = 16000) -> complex:
    k = np.arange(w.size)
    return complex(np.sum(w * np.exp(-2j * np.pi * freq_hz * k / sample_rate_hz)))


def as_waveform(samples: np.ndarray, sample_rate_hz: int = 16000) -> Waveform:
    return Waveform(np.asarray(samples, dtype=np.float64), sample_rate_hz)
