"""Finite-difference gradient checks shared by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .acoustics import AcousticScene
from .autodiff import Tensor, directional_grad_check, ops
from .degradations import synth_speechlike
from .losses import (complex_loss, consistency_loss, init_disc_params, mag_loss, metric_losses, phase_loss,
                     time_loss)
from .dsp import StftConfig
from .model import Plant, TOY_CONFIG, forward, init_params, randomize_zero_params
from .model.layers import as_param_tensors


def _rand(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape))


def primitive_cases(seed: int = 0) -> dict:
    """name -> (f, inputs) for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    pos = lambda *s: Tensor(rng.uniform(0.5, 2.0, s))  # noqa: E731
    r = lambda *s: _rand(rng, *s)  # noqa: E731
    probes: dict = {}

    def sc(t):
        # fixed random projection per output shape, so f is deterministic
        if t.shape not in probes:
            probes[t.shape] = Tensor(rng.standard_normal(t.shape))
        return ops.sum(ops.mul(t, probes[t.shape]))

    cases = {
        "add": (lambda a, b: sc(ops.add(a, b)), [r(3, 4), r(4)]),
        "sub": (lambda a, b: sc(ops.sub(a, b)), [r(3, 4), r(3, 4)]),
        "mul": (lambda a, b: sc(ops.mul(a, b)), [r(2, 3, 4), r(3, 4)]),
        "div": (lambda a, b: sc(ops.div(a, b)), [r(3, 4), pos(3, 4)]),
        "matmul": (lambda a, b: sc(ops.matmul(a, b)), [r(2, 3, 4), r(4, 5)]),
        "linear": (lambda x, w, b: sc(ops.linear(x, w, b)), [r(2, 3, 4), r(4, 5), r(5)]),
        "exp": (lambda a: sc(ops.exp(a)), [r(3, 4)]),
        "log": (lambda a: sc(ops.log(a)), [pos(3, 4)]),
        "sqrt": (lambda a: sc(ops.sqrt(a)), [pos(3, 4)]),
        "square": (lambda a: sc(ops.square(a)), [r(3, 4)]),
        "tanh": (lambda a: sc(ops.tanh(a)), [r(3, 4)]),
        "erf": (lambda a: sc(ops.erf(a)), [r(3, 4)]),
        "sigmoid": (lambda a: sc(ops.sigmoid(a)), [r(3, 4)]),
        "silu": (lambda a: sc(ops.silu(a)), [r(3, 4)]),
        "softplus": (lambda a: sc(ops.softplus(a)), [r(3, 4)]),
        "cos": (lambda a: sc(ops.cos(a)), [r(3, 4)]),
        "sin": (lambda a: sc(ops.sin(a)), [r(3, 4)]),
        "atan2": (lambda a, b: sc(ops.atan2(a, b)), [r(3, 4), pos(3, 4)]),
        "cmul": (lambda a, b: sc(ops.cmul(a, b)), [r(3, 4, 2), r(3, 4, 2)]),
        "softmax": (lambda a: sc(ops.softmax(a, axis=-1)), [r(3, 5)]),
        "layer_norm": (lambda a, g, b: sc(ops.layer_norm(a, g, b)), [r(3, 6), r(6), r(6)]),
        "sum": (lambda a: sc(ops.sum(a, axis=1, keepdims=True)), [r(3, 4, 2)]),
        "mean": (lambda a: sc(ops.mean(a, axis=(0, 2))), [r(3, 4, 2)]),
        "reshape": (lambda a: sc(ops.reshape(a, (4, 6))), [r(2, 3, 4)]),
        "transpose": (lambda a: sc(ops.transpose(a, (2, 0, 1))), [r(2, 3, 4)]),
        "expand": (lambda a: sc(ops.expand(a, (3, 4, 5))), [r(4, 1)]),
        "concat": (lambda a, b: sc(ops.concat([a, b], axis=1)), [r(2, 3), r(2, 4)]),
        "stack": (lambda a, b: sc(ops.stack([a, b], axis=0)), [r(2, 3), r(2, 3)]),
        "getitem": (lambda a: sc(ops.getitem(a, (slice(None), slice(1, 3)))), [r(3, 4)]),
        "flip": (lambda a: sc(ops.flip(a, 1)), [r(3, 4)]),
        "pad": (lambda a: sc(ops.pad(a, [(1, 0), (2, 3)])), [r(3, 4)]),
        "pad_reflect": (lambda a: sc(ops.pad(a, [(0, 0), (2, 2)], mode="reflect")), [r(3, 6)]),
        "conv2d": (lambda x, w, b: sc(ops.conv2d(x, w, b, stride=(1, 2), padding=((1, 1), (0, 1)))),
                   [r(1, 5, 7, 2), r(3, 3, 2, 3), r(3)]),
        "conv2d_dilated": (lambda x, w: sc(ops.conv2d(x, w, None, padding=((2, 2), (1, 1)), dilation=(2, 1))),
                           [r(1, 6, 5, 2), r(3, 3, 2, 2)]),
        "conv2d_transpose": (lambda x, w, b: sc(ops.conv2d_transpose(x, w, b, stride=(1, 2))),
                             [r(1, 4, 3, 2), r(1, 3, 2, 3), r(3)]),
        "causal_depthwise_conv1d": (lambda x, w, b: sc(ops.causal_depthwise_conv1d(x, w, b)),
                                    [r(2, 6, 3), r(4, 3), r(3)]),
        "linear_scan": (lambda la, x: sc(ops.linear_scan(la, x)), [Tensor(-rng.uniform(0.1, 1, (2, 6, 3))),
                                                                   r(2, 6, 3)]),
        "fir": (lambda x, h: sc(ops.fir(x, h, 1)), [r(2, 20), r(5)]),
        "frames": (lambda x: sc(ops.frames(x, 8, 4)), [r(2, 24)]),
        "overlap_add": (lambda f: sc(ops.overlap_add(f, 4)), [r(2, 5, 8)]),
        "sef": (lambda y: sc(ops.sef(y, 0.5)), [r(3, 4)]),
        "minimum": (lambda a: sc(ops.minimum(a, 0.3)), [Tensor(rng.uniform(-1, 0.2, (3, 4)))]),
        "anti_wrap": (lambda a: sc(ops.anti_wrap(a)), [Tensor(rng.uniform(0.2, 2.9, (3, 4)))]),
        "abs": (lambda a: sc(ops.abs(a)), [Tensor(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)))]),
    }
    return cases


def loss_cases(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    cfg = StftConfig(win_len=32, hop_len=8, fft_len=32)
    disc = as_param_tensors(init_disc_params(2, seed))
    c_t = Tensor(rng.standard_normal((1, 64)))
    c_m = Tensor(rng.uniform(0.5, 1.5, (1, 6, 9)))
    label = np.array([0.4])
    return {
        "time": (lambda e: time_loss(e, c_t), [Tensor(rng.standard_normal((1, 64)))]),
        "mag": (lambda m: mag_loss(m, c_m), [Tensor(rng.uniform(0.5, 1.5, (1, 6, 9)))]),
        "complex": (lambda s: complex_loss(s, Tensor(np.zeros((1, 6, 9, 2)))), [_rand(rng, 1, 6, 9, 2)]),
        "phase": (lambda p: phase_loss(p, Tensor(np.zeros((1, 6, 9)))),
                  [Tensor(rng.uniform(0.1, 0.9, (1, 6, 9)))]),
        "consistency": (lambda s: consistency_loss(s, cfg, 64), [_rand(rng, 1, 9, 17, 2)]),
        "metric_gen": (lambda m: metric_losses(m, c_m, disc, label)["gen_term"],
                       [Tensor(rng.uniform(0.5, 1.5, (1, 6, 9)))]),
        "metric_disc": (lambda w: metric_losses(c_m, c_m, {**disc, "disc.out.w": w}, label)["disc_term"],
                        [Tensor(disc["disc.out.w"].data.copy())]),
    }


def model_check(seed: int = 0, seconds: float = 0.2, tol: float = 1e-4, h: float = 1e-4, cfg=TOY_CONFIG):
    """End-to-end check of ``mean (eh - c)^2`` against every parameter tensor of the toy model.

    Zero-initialised output layers are randomised first so no branch is dead.
    Each tensor is probed along one random direction.
    """
    n = int(16000 * seconds)
    scene = AcousticScene()
    rirs = scene.paths()
    plant = Plant.from_scene(scene, rirs)
    x = synth_speechlike(seed, n).samples[None]
    c = Tensor(0.5 * synth_speechlike(seed + 1, n).samples[None])
    params = as_param_tensors(randomize_zero_params(init_params(cfg, seed), seed))
    names = sorted(params)

    def f(*ts):
        r = forward(dict(zip(names, ts)), cfg, x, plant)
        return ops.mean(ops.square(ops.sub(r.eh, c)))

    return directional_grad_check(f, [params[k] for k in names], h=h, tol=tol, seed=seed)
