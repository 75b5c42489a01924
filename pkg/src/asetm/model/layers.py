"""Network building blocks on channels-last feature maps ``(B, T, F, C)``.

Each block is a pair: ``init_*`` adds its named arrays to a parameter dict,
and the forward function reads them back by prefix. Output projections of
residual branches start at zero so every block is an exact identity at init.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Tensor, ops
from .config import ModelConfig
from .ssm import selective_scan

DENSE_DILATIONS = (1, 2, 4, 8)


def uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_params(p, name, rng, kh, kw, cin, cout, zero=False):
    p[f"{name}.w"] = np.zeros((kh, kw, cin, cout)) if zero else uniform(rng, (kh, kw, cin, cout), kh * kw * cin)
    p[f"{name}.b"] = np.zeros(cout)


def _linear_params(p, name, rng, din, dout, bias=True, zero=False):
    p[f"{name}.w"] = np.zeros((din, dout)) if zero else uniform(rng, (din, dout), din)
    if bias:
        p[f"{name}.b"] = np.zeros(dout)


def conv(p, name, x, **kw):
    return ops.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], **kw)


def linear(p, name, x):
    return ops.linear(x, p[f"{name}.w"], p.get(f"{name}.b"))


# -- dense block ------------------------------------------------------------------

def init_dense_block(p, name, rng, ch, depth):
    for i in range(depth):
        _conv_params(p, f"{name}.l{i}", rng, 3, 3, ch * (i + 1), ch)
    _conv_params(p, f"{name}.fuse", rng, 1, 1, ch * (depth + 1), ch)


def dense_block(p, name, x, depth):
    """Dilated 3x3 convs (dilation over time), each fed the concat of all earlier maps."""
    feats = [x]
    for i in range(depth):
        dil = DENSE_DILATIONS[i % len(DENSE_DILATIONS)]
        inp = feats[0] if i == 0 else ops.concat(feats, axis=-1)
        y = conv(p, f"{name}.l{i}", inp, padding=((dil, dil), (1, 1)), dilation=(dil, 1))
        feats.append(ops.silu(y))
    return conv(p, f"{name}.fuse", ops.concat(feats, axis=-1))


# -- encoder ----------------------------------------------------------------------

def init_encoder(p, cfg: ModelConfig, rng):
    c = cfg.c_enc
    _conv_params(p, "enc.in", rng, 1, 1, 2, c)
    init_dense_block(p, "enc.dense", rng, c, cfg.dense_depth)
    _conv_params(p, "enc.down", rng, 1, cfg.freq_kernel, c, c)


def encoder(p, cfg: ModelConfig, feats):
    """``(B, T, F, 2)`` stacked magnitude/phase -> ``(B, T, n_enc, c_enc)``."""
    if feats.shape[2] != cfg.n_freq or feats.shape[3] != 2:
        raise ValueError(f"encoder expects (B, T, {cfg.n_freq}, 2), got {feats.shape}")
    x = ops.silu(conv(p, "enc.in", feats))
    x = dense_block(p, "enc.dense", x, cfg.dense_depth)
    x = conv(p, "enc.down", x, stride=(1, cfg.freq_stride))
    return ops.silu(x)


# -- bidirectional Mamba pathway ----------------------------------------------------

def init_mamba_dir(p, name, cfg: ModelConfig, rng):
    e = cfg.inner_dim
    p[f"{name}.conv.w"] = uniform(rng, (cfg.conv_kernel, e), cfg.conv_kernel)
    p[f"{name}.conv.b"] = np.zeros(e)
    n_dt = cfg.n_ssm_heads if cfg.ssm_variant == "m2" else e
    _linear_params(p, f"{name}.dt", rng, e, n_dt, bias=False)
    # step sizes start log-uniform in [1e-3, 1e-1]
    dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=n_dt))
    p[f"{name}.dt.b"] = dt + np.log(-np.expm1(-dt))
    _linear_params(p, f"{name}.B", rng, e, cfg.ssm_state, bias=False)
    _linear_params(p, f"{name}.C", rng, e, cfg.ssm_state, bias=False)
    if cfg.ssm_variant == "m2":
        p[f"{name}.a_log"] = np.log(rng.uniform(1.0, 16.0, size=cfg.n_ssm_heads))
        p[f"{name}.d"] = np.ones(cfg.n_ssm_heads)
    else:
        p[f"{name}.a_log"] = np.log(np.tile(np.arange(1.0, cfg.ssm_state + 1.0), (e, 1)))
        p[f"{name}.d"] = np.ones(e)


def mamba_dir(p, name, cfg: ModelConfig, v):
    """One scan direction over axis 1 of ``(N, L, E)``."""
    n, l, e = v.shape
    u = ops.silu(ops.causal_depthwise_conv1d(v, p[f"{name}.conv.w"], p[f"{name}.conv.b"]))
    delta = ops.softplus(linear(p, f"{name}.dt", u))
    b = linear(p, f"{name}.B", u)
    c = linear(p, f"{name}.C", u)
    if cfg.ssm_variant == "m2":
        uh = ops.reshape(u, (n, l, cfg.n_ssm_heads, cfg.ssm_headdim))
    else:
        uh = ops.reshape(u, (n, l, e, 1))
    y = selective_scan(uh, delta, p[f"{name}.a_log"], b, c, p[f"{name}.d"])
    return ops.reshape(y, (n, l, e))


def init_pathway(p, name, cfg: ModelConfig, rng):
    c, e = cfg.c_enc, cfg.inner_dim
    p[f"{name}.ln.g"] = np.ones(c)
    p[f"{name}.ln.b"] = np.zeros(c)
    _linear_params(p, f"{name}.in", rng, c, e)
    _linear_params(p, f"{name}.gate", rng, c, e)
    init_mamba_dir(p, f"{name}.fwd", cfg, rng)
    init_mamba_dir(p, f"{name}.bwd", cfg, rng)
    _linear_params(p, f"{name}.fuse", rng, 2 * e, e)
    _linear_params(p, f"{name}.out", rng, e, c, zero=True)


def pathway(p, name, cfg: ModelConfig, x):
    """Residual bidirectional Mamba layer scanning axis 1 of ``(N, L, C)``."""
    xn = ops.layer_norm(x, p[f"{name}.ln.g"], p[f"{name}.ln.b"])
    v = linear(p, f"{name}.in", xn)
    z = linear(p, f"{name}.gate", xn)
    yf = mamba_dir(p, f"{name}.fwd", cfg, v)
    yb = ops.flip(mamba_dir(p, f"{name}.bwd", cfg, ops.flip(v, 1)), 1)
    y = linear(p, f"{name}.fuse", ops.concat([yf, yb], axis=-1))
    return ops.add(x, linear(p, f"{name}.out", ops.mul(y, ops.silu(z))))


def init_tf_block(p, name, cfg: ModelConfig, rng):
    init_pathway(p, f"{name}.time", cfg, rng)
    init_pathway(p, f"{name}.freq", cfg, rng)


def tf_axis(p, name, cfg: ModelConfig, x, axis: str):
    """Apply one pathway along ``axis`` ('time' or 'freq') of ``(B, T, F, C)``."""
    bsz, t, f, c = x.shape
    if axis == "time":
        seq = ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (bsz * f, t, c))
        out = pathway(p, name, cfg, seq)
        return ops.transpose(ops.reshape(out, (bsz, f, t, c)), (0, 2, 1, 3))
    if axis == "freq":
        out = pathway(p, name, cfg, ops.reshape(x, (bsz * t, f, c)))
        return ops.reshape(out, (bsz, t, f, c))
    raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")


def tf_block(p, name, cfg: ModelConfig, x):
    x = tf_axis(p, f"{name}.time", cfg, x, "time")
    return tf_axis(p, f"{name}.freq", cfg, x, "freq")


# -- attention bottleneck -----------------------------------------------------------

def sinusoidal_table(n_pos: int, dim: int) -> np.ndarray:
    pos = np.arange(n_pos)[:, None]
    i = np.arange(dim)[None, :]
    ang = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


def init_bottleneck(p, cfg: ModelConfig, rng):
    c, c4, k, dm = cfg.c_enc, cfg.c_enc // 4, cfg.reduce_kernel, cfg.token_dim
    _conv_params(p, "att.reduce", rng, 1, k, c, c4)
    for nm in ("q", "k", "v"):
        _linear_params(p, f"att.{nm}", rng, dm, dm)
    _linear_params(p, "att.o", rng, dm, dm, zero=True)
    p["att.expand.w"] = uniform(rng, (1, k, c4, c), c4 * k)
    p["att.expand.b"] = np.zeros(c)


def multi_head_attention(p, x, n_heads):
    bsz, t, dm = x.shape
    dh = dm // n_heads

    def heads(z):
        return ops.transpose(ops.reshape(z, (bsz, t, n_heads, dh)), (0, 2, 1, 3))

    q, k, v = (heads(linear(p, f"att.{nm}", x)) for nm in ("q", "k", "v"))
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = ops.matmul(ops.softmax(scores, axis=-1), v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (bsz, t, dm))
    return linear(p, "att.o", ctx)


def bottleneck(p, cfg: ModelConfig, x):
    bsz, t, f, c = x.shape
    r = conv(p, "att.reduce", x)  # (B, T, n_enc/2, C/4)
    tokens = ops.reshape(r, (bsz, t, cfg.token_dim))
    if cfg.positional_encoding:
        tokens = ops.add(tokens, sinusoidal_table(t, cfg.token_dim))
    att = multi_head_attention(p, tokens, cfg.n_heads)
    att = ops.reshape(att, (bsz, t, cfg.n_enc // 2, c // 4))
    up = ops.conv2d_transpose(att, p["att.expand.w"], p["att.expand.b"])
    return ops.add(x, up)


# -- decoders -----------------------------------------------------------------------

def init_decoders(p, cfg: ModelConfig, rng):
    c = cfg.c_enc
    for br in ("mag", "pha"):
        init_dense_block(p, f"dec.{br}.dense", rng, c, cfg.dense_depth)
        p[f"dec.{br}.up.w"] = uniform(rng, (1, cfg.freq_kernel, c, c), c * cfg.freq_kernel)
        p[f"dec.{br}.up.b"] = np.zeros(c)
    _conv_params(p, "dec.mag.head", rng, 1, 1, c, 1)
    p["dec.mag.head.b"][:] = cfg.mag_bias_init
    _conv_params(p, "dec.pha.re", rng, 1, 1, c, 1)
    if cfg.phase_mode == "relative":
        p["dec.pha.re.b"][:] = 1.0  # start at the input phase
    _conv_params(p, "dec.pha.im", rng, 1, 1, c, 1)


def _upsample(p, name, cfg, x):
    x = dense_block(p, f"{name}.dense", x, cfg.dense_depth)
    x = ops.conv2d_transpose(x, p[f"{name}.up.w"], p[f"{name}.up.b"], stride=(1, cfg.freq_stride))
    return ops.silu(x)


MAG_CLAMP = 8.0


def decoders(p, cfg: ModelConfig, x, mag_in, pha_in=None):
    """Features -> (magnitude, phase), each ``(B, T, F)``.

    In ``relative`` phase mode the two heads give a rotation of the input
    phase ``pha_in`` instead of an absolute angle.
    """
    m = _upsample(p, "dec.mag", cfg, x)
    z = ops.reshape(conv(p, "dec.mag.head", m), mag_in.shape)
    mag = ops.mul(ops.exp(ops.minimum(z, MAG_CLAMP)), mag_in)
    h = _upsample(p, "dec.pha", cfg, x)
    re = ops.reshape(conv(p, "dec.pha.re", h), mag_in.shape)
    im = ops.reshape(conv(p, "dec.pha.im", h), mag_in.shape)
    pha = ops.atan2(im, re)
    if cfg.phase_mode == "relative":
        pha = ops.add(pha, pha_in)
    return mag, pha


def as_param_tensors(arrays: dict) -> dict:
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
