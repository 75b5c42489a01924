"""Degraded-speech task generation: additive noise, reverberation, clipping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .acoustics import AcousticScene, Rir, propagate
from .dsp import Waveform, convolve

PEAK_LEVEL = 0.95
TRAIN_SNRS_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS_DB = (2.5, 7.5, 12.5, 17.5)
TRAIN_ETA_RANGE = (0.1, 0.5)
TEST_ETAS = (0.25, 0.1)


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation. ``kind`` is ``noise``, ``reverb`` or ``clip``."""

    kind: str
    snr_db: float | None = None
    eta: float | None = None
    rir: Rir | None = field(default=None, compare=False)
    noise_kind: str = "pink"
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind == "noise":
            if self.snr_db is None or not math.isfinite(self.snr_db):
                raise ValueError(f"noise degradation needs a finite snr_db, got {self.snr_db}")
        elif kind == "clip":
            if self.eta is None or not 0.0 < self.eta <= 1.0:
                raise ValueError(f"clipping threshold must lie in (0, 1], got {self.eta}")
        elif kind == "reverb":
            if self.rir is None:
                raise ValueError("reverb degradation needs a RIR")
        else:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    def to_json(self) -> str:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "noise":
            d.update(snr_db=self.snr_db, noise_kind=self.noise_kind)
        elif self.kind == "clip":
            d["eta"] = self.eta
        else:
            d["rir_taps"] = len(self.rir)
        return json.dumps(d, sort_keys=True)


@dataclass(frozen=True)
class TaskSample:
    x: Waveform
    c: Waveform
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) != len(self.c) or self.x.sample_rate_hz != self.c.sample_rate_hz:
            raise ValueError("x and c must share length and sample rate")


def energy(x) -> float:
    x = x.samples if isinstance(x, Waveform) else np.asarray(x)
    return float(np.dot(x, x))


def mix_at_snr(s: Waveform, n: Waveform, snr_db: float) -> Waveform:
    """``s + g n`` with ``g`` chosen so that the speech-to-noise ratio is ``snr_db``."""
    if len(s) != len(n):
        raise ValueError(f"speech and noise lengths differ: {len(s)} vs {len(n)}")
    es, en = energy(s), energy(n)
    if es <= 0 or en <= 0:
        raise ValueError("speech and noise must both have nonzero energy")
    g = math.sqrt(es / (en * 10.0 ** (snr_db / 10.0)))
    return s.with_samples(s.samples + g * n.samples)


def apply_reverb(s: Waveform, r: Rir) -> Waveform:
    return s.with_samples(convolve(s.samples, r.taps, mode="same_leading"))


def apply_clip(s: Waveform, eta: float) -> Waveform:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    return s.with_samples(np.maximum(np.minimum(s.samples, eta), -eta))


def peak_normalize(s: Waveform, peak: float = PEAK_LEVEL) -> Waveform:
    m = float(np.max(np.abs(s.samples)))
    if m == 0:
        raise ValueError("cannot normalise a silent signal")
    return s.with_samples(s.samples * (peak / m))


def make_task_sample(s: Waveform, spec: DegradationSpec, scene: AcousticScene, rirs,
                     noise: Waveform | None = None, reverb_through_primary: bool = False,
                     scene_id: str = "") -> TaskSample:
    """Degraded reference-mic input ``x`` and target ``c`` for one task.

    For noise the target is the clean speech as heard at the modification
    microphone (``P * s``); for reverb and clipping it is ``s`` itself.
    """
    p, _ = rirs
    meta = {"spec": spec.to_json(), "scene": scene_id}
    if spec.kind == "noise":
        if noise is None:
            noise = make_noise(spec.noise_kind, len(s), s.sample_rate_hz, spec.seed)
        x = mix_at_snr(s, noise, spec.snr_db)
        c = propagate(s, p)
    elif spec.kind == "reverb":
        x = apply_reverb(s, spec.rir)
        if reverb_through_primary:
            x = propagate(x, p)
        c = s
    else:
        x = apply_clip(s, spec.eta)
        c = s
    return TaskSample(x, c, meta)


def target_for(task: str, s: Waveform, rirs) -> Waveform:
    return propagate(s, rirs[0]) if task == "noise" else s


# -- synthetic signals ----------------------------------------------------------

def _smooth_walk(rng, n_ctrl, lo, hi, step):
    v = np.empty(n_ctrl)
    v[0] = rng.uniform(lo, hi)
    for i in range(1, n_ctrl):
        v[i] = np.clip(v[i - 1] + rng.normal(0.0, step), lo, hi)
    return v


def _syllable_gate(rng, n, rate):
    gate = np.zeros(n)
    t = int(rng.uniform(0.02, 0.1) * rate)
    while t < n:
        dur = int(rng.uniform(0.12, 0.3) * rate)
        ramp = max(int(0.02 * rate), 1)
        seg = np.ones(dur)
        r = min(ramp, dur // 2)
        if r > 0:
            edge = 0.5 * (1 - np.cos(np.pi * np.arange(r) / r))
            seg[:r] = edge
            seg[-r:] = edge[::-1]
        end = min(t + dur, n)
        gate[t:end] = seg[: end - t] * rng.uniform(0.5, 1.0)
        t = end + int(rng.uniform(0.04, 0.15) * rate)
    return gate


def synth_speechlike(seed: int, length: int, rate: int = 16000, gated: bool = True) -> Waveform:
    """Deterministic pseudo-speech.

    A harmonic series on a random-walk pitch (90-220 Hz) is shaped by two to
    four drifting formant resonances and gated into syllable-like bursts, then
    peak-normalised to 0.95.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    rng = np.random.default_rng(seed)
    ctrl_hop = max(rate // 100, 1)
    n_ctrl = length // ctrl_hop + 2
    t_ctrl = np.arange(n_ctrl) * ctrl_hop
    t = np.arange(length)
    f0 = np.interp(t, t_ctrl, _smooth_walk(rng, n_ctrl, 90.0, 220.0, 3.0))
    phase = 2 * np.pi * np.cumsum(f0) / rate

    n_formants = int(rng.integers(2, 5))
    centres = [(300, 900), (900, 2300), (2300, 3200), (3200, 4200)]
    formants = []
    for k in range(n_formants):
        lo, hi = centres[k]
        freq = np.interp(t, t_ctrl, _smooth_walk(rng, n_ctrl, lo, hi, 15.0))
        bw = rng.uniform(60.0, 160.0) * (1 + 0.3 * k)
        formants.append((freq, bw, 10 ** (-0.4 * k)))

    out = np.zeros(length)
    n_harm = int(min(rate / 2 - 200, 5000) // 90)
    for h in range(1, n_harm + 1):
        fh = h * f0
        live = fh < rate / 2 - 100
        if not np.any(live):
            break
        env = np.zeros(length)
        for freq, bw, amp in formants:
            env += amp / np.sqrt(1 + ((fh - freq) / (bw / 2)) ** 2)
        out += np.where(live, env * np.sin(h * phase), 0.0) / math.sqrt(h)
    out += 0.01 * rng.standard_normal(length)
    if gated:
        out *= _syllable_gate(rng, length, rate)
    return peak_normalize(Waveform(out, rate))


def pink_noise(seed: int, length: int, rate: int = 16000) -> Waveform:
    """1/f-shaped Gaussian noise with a gentle roll-off above 6 kHz."""
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(length))
    f = np.fft.rfftfreq(length, 1.0 / rate)
    shape = 1.0 / np.sqrt(np.maximum(f, 50.0))
    shape /= np.sqrt(1 + (f / 6000.0) ** 4)
    x = np.fft.irfft(spec * shape, n=length)
    return Waveform(x / np.max(np.abs(x)) * 0.5, rate)


def babble_noise(seed: int, length: int, rate: int = 16000, talkers: int = 5) -> Waveform:
    rng = np.random.default_rng(seed)
    acc = np.zeros(length)
    for k in range(talkers):
        acc += synth_speechlike(int(rng.integers(1 << 31)), length, rate).samples
    return Waveform(acc / np.max(np.abs(acc)) * 0.5, rate)


def make_noise(kind: str, length: int, rate: int, seed: int) -> Waveform:
    if kind == "pink":
        return pink_noise(seed, length, rate)
    if kind == "babble":
        return babble_noise(seed, length, rate)
    if kind == "white":
        return Waveform(np.random.default_rng(seed).standard_normal(length) * 0.3, rate)
    if kind == "mixed":
        a = pink_noise(seed, length, rate).samples
        b = babble_noise(seed + 1, length, rate).samples
        return Waveform((a + b) / 2, rate)
    raise ValueError(f"unknown noise kind {kind!r}")
