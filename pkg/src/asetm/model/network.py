"""End-to-end network: waveform in, cancelling signal and enhanced field out."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..dsp import StftConfig
from . import layers
from .config import ModelConfig
from .spectral import istft_t, magnitude, phase, polar_to_spec, stft_t

# magnitude fed to the encoder is power-law compressed (the decoder's
# multiplicative residual still uses the raw magnitude)
MAG_COMPRESS = 0.3


@dataclass
class Plant:
    """What the differentiable render needs from an acoustic scene."""

    primary: np.ndarray
    secondary: np.ndarray
    lambda_sq: float = math.inf

    def __post_init__(self):
        self.primary = np.asarray(self.primary, dtype=np.float64)
        self.secondary = np.asarray(self.secondary, dtype=np.float64)
        if self.primary.ndim != 1 or self.secondary.ndim != 1:
            raise ValueError("plant paths must be 1-D tap arrays")
        if not (self.lambda_sq > 0):
            raise ValueError(f"lambda_sq must be > 0 or inf, got {self.lambda_sq}")

    @classmethod
    def from_scene(cls, scene, rirs):
        primary, secondary = rirs
        return cls(primary.taps, secondary.taps, scene.lambda_sq)


@dataclass
class ForwardResult:
    y_spec: Tensor      # (B, T, F, 2) cancelling-signal spectrum
    y_wav: Tensor       # (B, L) after lookahead
    eh: Tensor          # (B, L) enhanced field at the modification mic
    d: np.ndarray       # (B, L) primary-path field
    mag: Tensor
    pha: Tensor
    shapes: dict


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    """Named parameter arrays; residual output layers are zero."""
    rng = np.random.default_rng(seed)
    p: dict = {}
    layers.init_encoder(p, cfg, rng)
    half = cfg.n_tf // 2
    for i in range(cfg.n_tf):
        layers.init_tf_block(p, f"tf{i}", cfg, rng)
        if i == half - 1:
            layers.init_bottleneck(p, cfg, rng)
    layers.init_decoders(p, cfg, rng)
    if cfg.out_fir_taps:
        # a pure delay that cancels the lookahead advance, so any lookahead starts from the same chain
        h = np.zeros(cfg.out_fir_len)
        h[cfg.out_fir_delay + cfg.lookahead_samples] = 1.0
        p["out.fir"] = h
    return p


def randomize_zero_params(params: dict, seed: int = 0, scale: float = 0.1) -> dict:
    """Copy of ``params`` with zero-initialised weight matrices filled randomly.

    Used by gradient-flow tests, where exact identity at init would leave
    upstream gradients at zero.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for k, v in params.items():
        v = np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
        if v.ndim >= 1 and not np.any(v):
            v = scale * rng.standard_normal(v.shape)
        out[k] = v
    return out


def input_features(x_spec: Tensor) -> tuple[Tensor, Tensor]:
    mag = magnitude(x_spec)
    feats = ops.stack([ops.exp(ops.mul(ops.log(mag), MAG_COMPRESS)), phase(x_spec)], axis=-1)
    return mag, feats


def spectral_net(params, cfg: ModelConfig, x_spec):
    """``(B, T, F, 2)`` input spectrum -> (y magnitude, y phase, stage shapes)."""
    shapes = {"input": x_spec.shape}
    mag_in, feats = input_features(x_spec)
    pha_in = phase(x_spec)
    h = layers.encoder(params, cfg, feats)
    shapes["encoder"] = h.shape
    half = cfg.n_tf // 2
    for i in range(cfg.n_tf):
        h = layers.tf_block(params, f"tf{i}", cfg, h)
        if i == half - 1:
            shapes["pre_attention"] = h.shape
            if cfg.attention_on:
                h = layers.bottleneck(params, cfg, h)
    shapes["backbone"] = h.shape
    mag, pha = layers.decoders(params, cfg, h, mag_in, pha_in)
    shapes["mag"] = mag.shape
    shapes["pha"] = pha.shape
    return mag, pha, shapes


def lookahead_t(y: Tensor, n: int) -> Tensor:
    """Advance ``(B, L)`` by ``n`` samples, zero-filling the tail."""
    if n == 0:
        return y
    length = y.shape[1]
    if not 0 <= n < length:
        raise ValueError(f"lookahead {n} must be in [0, {length})")
    return ops.pad(ops.getitem(y, (slice(None), slice(n, None))), [(0, 0), (0, n)])


def render_t(y: Tensor, x: np.ndarray, plant: Plant):
    """Differentiable ``eh = P*x + S*sef(y)``; returns ``(eh, d)``."""
    length = x.shape[1]
    with no_grad():
        d = ops.fir(Tensor(x), plant.primary).data
    a = ops.fir(ops.sef(y, plant.lambda_sq), plant.secondary)
    if a.shape[1] != length:
        raise ValueError("render: length mismatch")
    return ops.add(a, d), d


def forward(params, cfg: ModelConfig, x, plant: Plant, stft_cfg: StftConfig | None = None,
            zero_output: bool = False) -> ForwardResult:
    """Run the full chain for a batch ``x`` of shape ``(B, L)`` (or ``(L,)``).

    ``zero_output`` forces the magnitude to zero (a silent loudspeaker), so
    ``eh`` equals the primary-path field exactly.
    """
    stft_cfg = stft_cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError(f"forward expects (B, L) input, got {x.shape}")
    if stft_cfg.n_freq != cfg.n_freq:
        raise ValueError(f"model expects {cfg.n_freq} bins but STFT gives {stft_cfg.n_freq}")
    with no_grad():
        x_spec = stft_t(Tensor(x), stft_cfg)
    mag, pha, shapes = spectral_net(params, cfg, x_spec)
    if zero_output:
        mag = ops.mul(mag, 0.0)
    y_spec = polar_to_spec(mag, pha)
    y = istft_t(y_spec, x.shape[1], stft_cfg)
    if cfg.out_fir_taps:
        # delayed identity at init; learns a static time-domain correction shared over the utterance
        y = ops.fir(y, params["out.fir"], cfg.out_fir_delay)
    y = lookahead_t(y, cfg.lookahead_samples)
    eh, d = render_t(y, x, plant)
    return ForwardResult(y_spec, y, eh, d, mag, pha, shapes)
