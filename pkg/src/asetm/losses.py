"""Generator objective and metric discriminator.

All components use means rather than sums so the weights do not depend on
segment length. Spectra are ``(B, T, F, 2)`` tensors, magnitudes and phases
``(B, T, F)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor, ops
from .dsp import StftConfig
from .metrics import seg_snr
from .model.layers import uniform
from .model.spectral import istft_t, magnitude, phase, stft_t

COMPONENTS = ("time", "mag", "complex", "metric", "phase", "consistency")
DISC_COMPRESS = 0.3


class TrainingAbort(RuntimeError):
    """A loss component went non-finite."""


@dataclass(frozen=True)
class LossWeights:
    time: float = 0.2
    mag: float = 0.9
    complex: float = 0.1
    metric: float = 0.05
    phase: float = 0.3
    consistency: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in COMPONENTS)


@dataclass
class LossReport:
    components: dict
    total: Tensor

    @property
    def values(self) -> dict:
        out = {k: float(v.data) for k, v in self.components.items()}
        out["total"] = float(self.total.data)
        return out


def _same(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _l1_l2(diff, l1=True, l2=True):
    terms = []
    if l1:
        terms.append(ops.mean(ops.abs(diff)))
    if l2:
        terms.append(ops.mean(ops.square(diff)))
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


def time_loss(eh, c, hybrid: bool = True):
    """``mean|eh - c| + mean (eh - c)^2``; L1 only when ``hybrid`` is off."""
    _same(eh, c, "time_loss")
    return _l1_l2(ops.sub(eh, c), l2=hybrid)


def mag_loss(en_m, c_m, hybrid: bool = True):
    """L1 + L2 on magnitudes; L2 only when ``hybrid`` is off."""
    _same(en_m, c_m, "mag_loss")
    return _l1_l2(ops.sub(en_m, c_m), l1=hybrid)


def complex_loss(eh_spec, c_spec):
    _same(eh_spec, c_spec, "complex_loss")
    d = ops.sub(eh_spec, c_spec)
    return ops.add(ops.mean(ops.square(ops.getitem(d, (Ellipsis, 0)))),
                   ops.mean(ops.square(ops.getitem(d, (Ellipsis, 1)))))


def phase_loss(pha_e, pha_c):
    """Anti-wrapped instantaneous phase, group delay and angular frequency terms."""
    _same(pha_e, pha_c, "phase_loss")
    d = ops.sub(pha_e, pha_c)
    nt, nf = d.shape[-2], d.shape[-1]
    ip = ops.mean(ops.anti_wrap(d))
    gd = ops.mean(ops.anti_wrap(ops.sub(ops.getitem(d, (Ellipsis, slice(1, nf))),
                                        ops.getitem(d, (Ellipsis, slice(0, nf - 1))))))
    lead = (Ellipsis, slice(1, nt), slice(None))
    lag = (Ellipsis, slice(0, nt - 1), slice(None))
    iaf = ops.mean(ops.anti_wrap(ops.sub(ops.getitem(d, lead), ops.getitem(d, lag))))
    return ops.add(ops.add(ip, gd), iaf)


def project(spec, cfg: StftConfig, length: int | None = None):
    """``stft(istft(spec))``: the closest consistent spectrogram."""
    nt = spec.shape[1]
    length = length if length is not None else (nt - 1) * cfg.hop_len
    return stft_t(istft_t(spec, length, cfg), cfg)


def consistency_loss(spec_dec, cfg: StftConfig, length: int | None = None):
    proj = project(spec_dec, cfg, length)
    if proj.shape != spec_dec.shape:
        raise ValueError(f"consistency_loss: projection has shape {proj.shape}, expected {spec_dec.shape}")
    return ops.mean(ops.square(ops.sub(spec_dec, proj)))


# -- metric discriminator --------------------------------------------------------

DISC_LAYERS = 4


def init_disc_params(channels: int = 8, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    cin = 2
    for i in range(DISC_LAYERS):
        cout = channels * 2 ** min(i, 2)
        p[f"disc.c{i}.w"] = uniform(rng, (3, 3, cin, cout), 9 * cin)
        p[f"disc.c{i}.b"] = np.zeros(cout)
        cin = cout
    p["disc.out.w"] = uniform(rng, (cin, 1), cin)
    p["disc.out.b"] = np.zeros(1)
    return p


def _compress(m):
    return ops.exp(ops.mul(ops.log(ops.add(m, 1e-8)), DISC_COMPRESS))


def metric_disc(en_m, c_m, disc_params) -> Tensor:
    """Score in (0, 1) for each item of a ``(B, T, F)`` magnitude pair."""
    _same(en_m, c_m, "metric_disc")
    x = ops.stack([_compress(en_m), _compress(c_m)], axis=-1)
    for i in range(DISC_LAYERS):
        x = ops.conv2d(x, disc_params[f"disc.c{i}.w"], disc_params[f"disc.c{i}.b"], stride=2, padding=1)
        x = ops.silu(x)
    pooled = ops.mean(x, axis=(1, 2))
    return ops.reshape(ops.sigmoid(ops.linear(pooled, disc_params["disc.out.w"], disc_params["disc.out.b"])),
                       (x.shape[0],))


def proxy_label(clean, processed) -> float:
    """Perceptual-quality stand-in: sigmoid-mapped segmental SNR in [0, 1]."""
    s = seg_snr(clean, processed)
    return float(min(max(1.0 / (1.0 + math.exp(-(s - 5.0) / 5.0)), 0.0), 1.0))


def proxy_labels(clean: np.ndarray, processed: np.ndarray) -> np.ndarray:
    clean, processed = np.atleast_2d(clean), np.atleast_2d(processed)
    return np.array([proxy_label(c, p) for c, p in zip(clean, processed)])


def metric_losses(en_m, c_m, disc_params, label) -> dict:
    """``disc_term`` trains D; ``gen_term`` pushes the generator's score to 1."""
    label = np.asarray(label, dtype=np.float64)
    if np.any(label < 0) or np.any(label > 1):
        raise ValueError("proxy label must lie in [0, 1]")
    d_ref = metric_disc(c_m, c_m, disc_params)
    d_gen = metric_disc(en_m, c_m, disc_params)
    disc_term = ops.add(ops.mean(ops.square(ops.sub(d_ref, 1.0))), ops.mean(ops.square(ops.sub(d_gen, label))))
    gen_term = ops.mean(ops.square(ops.sub(d_gen, 1.0)))
    return {"disc_term": disc_term, "gen_term": gen_term}


def generator_metric_term(en_m, c_m, disc_params):
    return ops.mean(ops.square(ops.sub(metric_disc(en_m, c_m, disc_params), 1.0)))


# -- total --------------------------------------------------------------------------

def total_loss(components: dict, weights: LossWeights) -> LossReport:
    """Weighted sum of the six components; raises :class:`TrainingAbort` on NaN/inf."""
    missing = [k for k in COMPONENTS if k not in components]
    if missing:
        raise ValueError(f"missing loss components {missing}")
    total = None
    w = asdict(weights)
    for k in COMPONENTS:
        v = components[k]
        v = v if isinstance(v, Tensor) else Tensor(v)
        if not np.all(np.isfinite(v.data)):
            raise TrainingAbort(f"loss component {k!r} is not finite")
        term = ops.mul(v, w[k])
        total = term if total is None else ops.add(total, term)
    return LossReport({k: components[k] if isinstance(components[k], Tensor) else Tensor(components[k])
                       for k in COMPONENTS}, total)


def generator_components(eh, c: np.ndarray, y_spec, cfg: StftConfig, disc_params, hybrid: bool = True) -> dict:
    """All six generator components for enhanced ``eh`` (B, L) against target ``c``."""
    c_t = Tensor(np.atleast_2d(c))
    eh_spec = stft_t(eh, cfg)
    c_spec = stft_t(c_t, cfg)
    en_m, c_m = magnitude(eh_spec), magnitude(c_spec)
    return {
        "time": time_loss(eh, c_t, hybrid),
        "mag": mag_loss(en_m, c_m, hybrid),
        "complex": complex_loss(eh_spec, c_spec),
        "metric": generator_metric_term(en_m, c_m, disc_params),
        "phase": phase_loss(phase(eh_spec), phase(c_spec)),
        "consistency": consistency_loss(y_spec, cfg, eh.shape[1]),
    }
