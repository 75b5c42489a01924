"""Simulated acoustic loop: image-method paths, loudspeaker saturation, mixing.

The geometry follows a feedforward active-control layout: a reference
microphone picks up the disturbance ``x``, the primary path ``P`` carries it
to the modification microphone, and a loudspeaker driven with ``y`` reaches
the same microphone through the secondary path ``S`` after the memoryless
saturation ``sef``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.special import erf

from . import _kernels
from .dsp import Waveform, convolve

SPEED_OF_SOUND = 343.0
SINC_HALF_WIDTH = 40  # 81-tap fractional-delay kernel
HIGHPASS_HZ = 100.0
RIR_MAGIC = b"ASERIR1"

PAPER_ROOM_DIMS = (3.0, 4.0, 2.0)
PAPER_MOD_MIC = (1.5, 3.0, 1.0)
PAPER_REF_MIC = (1.5, 1.0, 1.0)
PAPER_SPEAKER = (1.5, 2.5, 1.0)
PAPER_RIR_LEN = 512
T60_GRID = (0.15, 0.175, 0.2, 0.225, 0.25)
LAMBDA_SQ_GRID = (0.1, 1.0, 10.0, math.inf)


@dataclass(frozen=True)
class RoomSpec:
    dims_m: tuple = PAPER_ROOM_DIMS
    t60_s: float = 0.25
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate_hz: int = 16000

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dims_m)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dims_m}")
        if not 0.05 <= self.t60_s <= 2.0:
            raise ValueError(f"T60 must lie in [0.05, 2] s, got {self.t60_s}")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "dims_m", dims)

    def reflection_coefficient(self) -> float:
        lx, ly, lz = self.dims_m
        beta = math.exp(-13.82 / (self.speed_of_sound * self.t60_s * (1 / lx + 1 / ly + 1 / lz)))
        if not beta < 1.0:
            raise ValueError(f"T60={self.t60_s} implies non-absorbing walls (beta={beta})")
        return beta

    def contains(self, pos) -> bool:
        return all(0.0 < p < d for p, d in zip(pos, self.dims_m))


@dataclass(frozen=True)
class AcousticScene:
    room: RoomSpec = field(default_factory=RoomSpec)
    ref_mic_pos: tuple = PAPER_REF_MIC
    mod_mic_pos: tuple = PAPER_MOD_MIC
    speaker_pos: tuple = PAPER_SPEAKER
    rir_len: int = PAPER_RIR_LEN
    lambda_sq: float = math.inf

    def __post_init__(self):
        for name in ("ref_mic_pos", "mod_mic_pos", "speaker_pos"):
            pos = tuple(float(v) for v in getattr(self, name))
            if len(pos) != 3 or not self.room.contains(pos):
                raise ValueError(f"{name}={pos} is not strictly inside room {self.room.dims_m}")
            object.__setattr__(self, name, pos)
        if self.rir_len < 1:
            raise ValueError("rir_len must be >= 1")
        if not self.lambda_sq > 0:
            raise ValueError(f"lambda_sq must be positive or inf, got {self.lambda_sq}")

    @property
    def sample_rate_hz(self) -> int:
        return self.room.sample_rate_hz

    def paths(self, seed: int = 0) -> tuple["Rir", "Rir"]:
        """Primary (ref mic -> mod mic) and secondary (speaker -> mod mic) RIRs."""
        p = simulate_rir(self.room, self.ref_mic_pos, self.mod_mic_pos, self.rir_len, seed)
        s = simulate_rir(self.room, self.speaker_pos, self.mod_mic_pos, self.rir_len, seed)
        return Rir(p.taps, "primary"), Rir(s.taps, "secondary")


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    role: str = "primary"

    def __post_init__(self):
        arr = np.asarray(self.taps, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("RIR taps must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("RIR contains non-finite taps")
        arr.setflags(write=False)
        object.__setattr__(self, "taps", arr)

    def __len__(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def impulse(cls, n_taps: int = 1, delay: int = 0, role: str = "primary") -> "Rir":
        taps = np.zeros(max(n_taps, delay + 1))
        taps[delay] = 1.0
        return cls(taps, role)


def _image_sources(room: RoomSpec, src, mic, max_dist: float):
    """Delays (in m) and gains of all images within ``max_dist`` of the mic."""
    dims = np.asarray(room.dims_m)
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    beta = room.reflection_coefficient()
    n_max = [int(math.ceil(max_dist / (2 * d))) + 1 for d in dims]
    axes = []
    for ax in range(3):
        n = np.arange(-n_max[ax], n_max[ax] + 1)
        # image coordinate for (q, n): (1 - 2q) * src + 2 n L; reflections |n - q| + |n|
        coords, refl = [], []
        for q in (0, 1):
            coords.append((1 - 2 * q) * src[ax] + 2 * n * dims[ax] - mic[ax])
            refl.append(np.abs(n - q) + np.abs(n))
        axes.append((np.concatenate(coords), np.concatenate(refl)))
    (cx, rx), (cy, ry), (cz, rz) = axes
    dist = np.sqrt(cx[:, None, None] ** 2 + cy[None, :, None] ** 2 + cz[None, None, :] ** 2)
    order = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    keep = dist <= max_dist
    dist = dist[keep]
    gains = beta ** order[keep] / (4.0 * math.pi * dist)
    return dist, gains


def simulate_rir(room: RoomSpec, src, mic, taps: int, seed: int = 0, highpass: bool = True) -> Rir:
    """Image-method impulse response from ``src`` to ``mic``.

    Images are placed with an 81-tap Hann-windowed sinc, so fractional delays
    are represented to sub-sample accuracy. Only images whose arrival falls
    inside ``taps`` (plus the kernel half-width) are summed. ``seed`` is
    recorded for cache metadata; the method itself is deterministic.
    """
    del seed
    src = tuple(float(v) for v in src)
    mic = tuple(float(v) for v in mic)
    if not (room.contains(src) and room.contains(mic)):
        raise ValueError(f"source {src} and microphone {mic} must be inside room {room.dims_m}")
    if np.allclose(src, mic):
        raise ValueError("source and microphone coincide")
    if taps < 1:
        raise ValueError("taps must be >= 1")
    fs = room.sample_rate_hz
    max_dist = (taps + SINC_HALF_WIDTH) * room.speed_of_sound / fs
    dist, gains = _image_sources(room, src, mic, max_dist)
    delays = dist * fs / room.speed_of_sound
    h = _kernels.accumulate_images(taps, delays, gains, SINC_HALF_WIDTH)
    if highpass:
        sos = sps.butter(4, HIGHPASS_HZ, btype="highpass", fs=fs, output="sos")
        h = sps.sosfilt(sos, h)
    return Rir(h)


def energy_decay_curve_db(h: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy decay, normalised to 0 dB."""
    e = np.cumsum(np.asarray(h, dtype=np.float64)[::-1] ** 2)[::-1]
    return 10.0 * np.log10(np.maximum(e / e[0], 1e-300))


def estimate_t60(h: np.ndarray, sample_rate_hz: int, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T60 by linear fit of the decay curve between two levels, extrapolated to 60 dB."""
    edc = energy_decay_curve_db(h)
    idx = np.nonzero((edc <= start_db) & (edc >= stop_db))[0]
    if idx.size < 2:
        raise ValueError("decay curve does not span the fit range")
    t = idx / sample_rate_hz
    slope, _ = np.polyfit(t, edc[idx], 1)
    return -60.0 / slope


def sef(y, lambda_sq: float) -> np.ndarray:
    """Scaled error function: integral of exp(-z^2 / (2 lambda^2)) from 0 to y."""
    y = np.asarray(y, dtype=np.float64)
    if math.isinf(lambda_sq):
        return y.copy()
    if not lambda_sq > 0:
        raise ValueError(f"lambda_sq must be positive, got {lambda_sq}")
    return math.sqrt(math.pi * lambda_sq / 2.0) * erf(y / math.sqrt(2.0 * lambda_sq))


def sef_derivative(y, lambda_sq: float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if math.isinf(lambda_sq):
        return np.ones_like(y)
    return np.exp(-(y ** 2) / (2.0 * lambda_sq))


def propagate(x: Waveform, rir: Rir) -> Waveform:
    return x.with_samples(convolve(x.samples, rir.taps, mode="same_leading"))


def render_ase(x: Waveform, y: Waveform, scene: AcousticScene, rirs) -> dict:
    """Primary signal ``d``, anti-signal ``a`` and enhanced signal ``eh = d + a``."""
    if len(x) != len(y):
        raise ValueError(f"x and y lengths differ: {len(x)} vs {len(y)}")
    if x.sample_rate_hz != y.sample_rate_hz:
        raise ValueError("x and y sample rates differ")
    p, s = rirs
    d = propagate(x, p)
    a = y.with_samples(convolve(sef(y.samples, scene.lambda_sq), s.taps, mode="same_leading"))
    eh = d.with_samples(d.samples + a.samples)
    return {"d": d, "a": a, "eh": eh}


def apply_lookahead(y: Waveform, lookahead: int) -> Waveform:
    """Advance ``y`` by ``lookahead`` samples, zero-filling the tail."""
    n = len(y)
    if lookahead < 0 or lookahead >= n:
        raise ValueError(f"lookahead must be in [0, {n}), got {lookahead}")
    if lookahead == 0:
        return y
    out = np.zeros(n)
    out[: n - lookahead] = y.samples[lookahead:]
    return y.with_samples(out)


def causality_margin(scene: AcousticScene) -> float:
    """Primary-path minus secondary-path direct delay, in seconds."""
    c = scene.room.speed_of_sound
    tp = math.dist(scene.ref_mic_pos, scene.mod_mic_pos) / c
    ts = math.dist(scene.speaker_pos, scene.mod_mic_pos) / c
    return tp - ts


def direct_path_delay(room: RoomSpec, src, mic) -> float:
    """Direct-path arrival in samples."""
    return math.dist(src, mic) * room.sample_rate_hz / room.speed_of_sound


# -- RIR cache files ----------------------------------------------------------

def write_rir(path, rir: Rir, meta: dict | None = None) -> Path:
    """Binary taps (magic, u32 count, f64 LE) with a ``.txt`` key=value sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    taps = np.asarray(rir.taps, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(RIR_MAGIC)
        fh.write(struct.pack("<I", taps.size))
        fh.write(taps.tobytes())
    lines = [f"role={rir.role}"]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"{key}={value}")
    path.with_suffix(path.suffix + ".txt").write_text("\n".join(lines) + "\n")
    return path


def read_rir(path) -> tuple[Rir, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(RIR_MAGIC)] != RIR_MAGIC:
        raise ValueError(f"{path}: bad RIR magic")
    off = len(RIR_MAGIC)
    (count,) = struct.unpack("<I", raw[off: off + 4])
    off += 4
    if len(raw) != off + 8 * count:
        raise ValueError(f"{path}: expected {count} taps, file has {(len(raw) - off) / 8}")
    taps = np.frombuffer(raw[off:], dtype="<f8").astype(np.float64)
    meta = {}
    side = path.with_suffix(path.suffix + ".txt")
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
    return Rir(taps, meta.pop("role", "primary")), meta
