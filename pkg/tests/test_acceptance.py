"""Acceptance criteria 1-11, one test each, at the stated tolerances.

Every test appends a one-line verdict to ``ACCEPTANCE_LINES`` (printed in the
terminal summary) before asserting. Runtime limits are checked against the
process CPU time of the test body.
"""

import csv
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES

from asetm.acoustics import (LAMBDA_SQ_GRID, T60_GRID, AcousticScene, Rir, RoomSpec, causality_margin,
                             estimate_t60, propagate, render_ase, sef, simulate_rir)
from asetm.adaptive import AdaptiveFilterState, frequency_response, fxlms_run, least_squares_filter
from asetm.autodiff import AdamW, Tensor, backward, grad_check
from asetm.checks import loss_cases, model_check, primitive_cases
from asetm.config import load_config
from asetm.data import generate_dataset
from asetm.degradations import DegradationSpec, make_task_sample, synth_speechlike
from asetm.dsp import StftConfig, Waveform, convolve, istft, stft
from asetm.evaluate import evaluate
from asetm.losses import (COMPONENTS, LossWeights, generator_components, init_disc_params, phase_loss,
                          total_loss)
from asetm.metrics import nmse, stoi
from asetm.model import (PAPER_CONFIG, TOY_CONFIG, Plant, forward, init_params, selective_scan,
                         selective_scan_reference)
from asetm.model import layers
from asetm.model.layers import as_param_tensors
from asetm.model.spectral import stft_t
from asetm.train import CURVE_FIELDS, load_generator, train

# optimiser and loss settings of the desk-scale training criteria
TIME_ONLY = ["loss.time=1", "loss.mag=0", "loss.complex=0", "loss.metric=0", "loss.phase=0",
             "loss.consistency=0"]
OVERFIT = {"lr": 6e-3, "grad_clip": 1.0, "steps": 200}
# the output FIR and relative phase let the toy model learn the primary/secondary
# path relation, which is longer than one STFT frame
DENOISE = ["optim.lr=3e-3", "optim.grad_clip=1.0", "optim.epochs=60", "model.out_fir_taps=512",
           "model.phase_mode=relative"] + TIME_ONLY


def report(num, name, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: {detail}")


class CpuTimer:
    def __enter__(self):
        self.t0 = time.process_time()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.process_time() - self.t0


# -- 1 ------------------------------------------------------------------------------

def test_criterion_01_dsp():
    rng = np.random.default_rng(1)
    with CpuTimer() as t:
        cfg = StftConfig()
        x = rng.standard_normal(32000)
        cola = float(np.max(np.abs(istft(stft(x, cfg), x.size).samples - x)))
        frame = rng.standard_normal(400) * cfg.window()
        spec = np.fft.rfft(frame)
        w = np.full(spec.size, 2.0)
        w[0] = w[-1] = 1.0
        parseval = abs(np.sum(w * np.abs(spec) ** 2) / 400 - np.sum(frame ** 2)) / np.sum(frame ** 2)
        a, h = rng.standard_normal(16000), rng.standard_normal(512)
        conv = float(np.sqrt(np.mean((convolve(a, h, method="fft") - convolve(a, h, method="direct")) ** 2)))
    ok = cola < 1e-6 and parseval < 1e-8 and conv < 1e-8 and t.elapsed < 10
    report(1, "dsp", ok, f"cola {cola:.1e}, parseval {parseval:.1e}, conv rms {conv:.1e}, {t.elapsed:.1f}s cpu")
    assert ok


# -- 2 ------------------------------------------------------------------------------

def _direct_peak(h):
    # first peak reaching half the global maximum
    i = int(np.argmax(h >= 0.5 * h.max()))
    while i + 1 < h.size and h[i + 1] > h[i]:
        i += 1
    return i


def test_criterion_02_acoustics():
    rng = np.random.default_rng(2)
    with CpuTimer() as t:
        room = RoomSpec((3.0, 4.0, 2.0), t60_s=0.2)
        worst_delay = 0.0
        for _ in range(20):
            src = tuple(rng.uniform(0.2, np.array(room.dims_m) - 0.2))
            mic = tuple(rng.uniform(0.2, np.array(room.dims_m) - 0.2))
            expected = math.dist(src, mic) * 16000 / 343.0
            h = np.abs(simulate_rir(room, src, mic, int(expected) + 200, highpass=False).taps)
            worst_delay = max(worst_delay, abs(_direct_peak(h) - expected))
        ratios = []
        for t60 in T60_GRID:
            r = RoomSpec((3.0, 4.0, 2.0), t60_s=t60)
            h = simulate_rir(r, (1.5, 1.0, 1.0), (1.5, 3.0, 1.0), int(1.2 * t60 * 16000)).taps
            ratios.append(estimate_t60(h, 16000) / t60)
        y = np.linspace(-100, 100, 2001)
        identity = bool(np.array_equal(sef(y, math.inf), y))
        sat = max(abs(sef(np.array([1e6]), lam)[0] - math.sqrt(math.pi * lam / 2)) for lam in LAMBDA_SQ_GRID[:-1])
    ok = worst_delay <= 3 and all(0.6 <= r <= 1.4 for r in ratios) and identity and sat < 1e-4 and t.elapsed < 60
    report(2, "acoustics", ok, f"delay err {worst_delay:.2f} taps, t60 ratios {min(ratios):.2f}-{max(ratios):.2f}, "
                               f"sef identity {identity}, saturation err {sat:.1e}, {t.elapsed:.1f}s cpu")
    assert ok


# -- 3 ------------------------------------------------------------------------------

def test_criterion_03_signal_chain():
    scene = AcousticScene()
    rirs = scene.paths()
    x = synth_speechlike(3, 16000)
    out = render_ase(x, Waveform(np.zeros(len(x)), 16000), scene, rirs)
    silent = bool(np.array_equal(out["eh"].samples, out["d"].samples))
    impulse = (rirs[0], Rir(np.array([1.0]), "secondary"))
    d = propagate(x, rirs[0])
    cancel = render_ase(x, d.with_samples(-d.samples), replace(scene, lambda_sq=math.inf), impulse)
    # residual energy of d + a relative to d
    resid = nmse(d, -cancel["a"].samples)
    margin = causality_margin(scene)
    ok = silent and resid <= -120.0 and abs(margin - 0.004373) <= 1e-6
    report(3, "signal chain", ok, f"y=0 exact {silent}, cancellation {resid:.1f} dB, margin {margin:.6f}s")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_criterion_04_fxlms_tone():
    with CpuTimer() as t:
        scene = AcousticScene(room=RoomSpec((3.0, 4.0, 2.0), t60_s=0.15), lambda_sq=math.inf)
        rirs = scene.paths()
        n, f0 = 5 * 16000, 250.0
        x = np.sin(2 * np.pi * f0 * np.arange(n) / 16000)
        st = AdaptiveFilterState.fresh(rirs[1].taps, 64, mu=5e-3)
        res = fxlms_run(x, np.zeros(n), scene, rirs, st, error_source="mic")
        final = float(res.nmse_curve[-1])
        m = 16000  # LS fit and comparison over the last second
        w_ls = least_squares_filter(x, res.d, np.zeros(n), rirs[1], 64, fit_from=n - m)
        a_ls = convolve(convolve(x, w_ls, mode="same_leading"), rirs[1].taps, mode="same_leading")
        ls = nmse(res.d[-m:], -a_ls[-m:])
        gap = abs(20 * math.log10(abs(frequency_response(res.weights, f0)) / abs(frequency_response(w_ls, f0))))
    ok = final <= -30 and ls <= -30 and gap <= 3 and t.elapsed < 120 and not res.diverged
    report(4, "fxlms tone", ok, f"adaptive {final:.1f} dB after 5 s, LS {ls:.1f} dB, response gap {gap:.2f} dB, "
                                f"{t.elapsed:.1f}s cpu")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def test_criterion_05_autodiff():
    with CpuTimer() as t:
        bad = []
        worst_p = worst_l = 0.0
        for name, (f, inputs) in primitive_cases(0).items():
            rep = grad_check(f, inputs, h=1e-5, tol=1e-5)
            worst_p = max(worst_p, rep.max_rel_error)
            if not rep.passed:
                bad.append(name)
        for name, (f, inputs) in loss_cases(0).items():
            rep = grad_check(f, inputs, h=1e-4, tol=1e-5)
            worst_l = max(worst_l, rep.max_rel_error)
            if not rep.passed:
                bad.append(name)
        model = model_check(0, tol=1e-4)
    ok = not bad and model.passed and t.elapsed < 300
    report(5, "autodiff", ok, f"primitives max rel {worst_p:.1e}, losses {worst_l:.1e}, model {model.max_rel_error:.1e}"
                              f"{', failing ' + ','.join(bad) if bad else ''}, {t.elapsed:.0f}s cpu")
    assert ok


# -- 6 ------------------------------------------------------------------------------

def test_criterion_06_model_structure():
    scene = AcousticScene()
    plant = Plant.from_scene(scene, scene.paths())
    cfg = PAPER_CONFIG
    r = forward(as_param_tensors(init_params(cfg, 0)), cfg, synth_speechlike(0, 1600).samples, plant)
    shapes_ok = (r.shapes["input"][2] == 201 and r.shapes["encoder"][2:] == (100, 128)
                 and cfg.token_dim == 1600 and cfg.n_heads == 10 and r.shapes["mag"][2] == 201)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, l, h, p, s = 2, int(rng.integers(1, 90)), 3, int(rng.integers(1, 4)), 4
        args = (rng.standard_normal((n, l, h, p)), rng.uniform(0.01, 0.5, (n, l, h)),
                rng.standard_normal((h, s) if seed % 2 else (h,)), rng.standard_normal((n, l, s)),
                rng.standard_normal((n, l, s)), rng.standard_normal(h))
        worst = max(worst, float(np.max(np.abs(selective_scan(*args).data - selective_scan_reference(*args)))))
    toy = TOY_CONFIG
    pt = as_param_tensors(init_params(toy, 1))
    feat = Tensor(np.random.default_rng(6).standard_normal((1, 9, toy.n_enc, toy.c_enc)))
    ident = all(np.array_equal(layers.tf_block(pt, f"tf{i}", toy, feat).data, feat.data) for i in range(toy.n_tf))
    ident = ident and np.array_equal(layers.bottleneck(pt, toy, feat).data, feat.data)
    ok = shapes_ok and worst < 1e-10 and ident
    report(6, "model structure", ok, f"paper shapes {shapes_ok} {r.shapes['encoder']}, scan err {worst:.1e} "
                                     f"over 100 seeds, residual identity {ident}")
    assert ok


# -- 7 ------------------------------------------------------------------------------

def test_criterion_07_loss_semantics():
    rng = np.random.default_rng(7)
    cfg = StftConfig()
    c = synth_speechlike(7, 8000).samples[None]
    disc = init_disc_params(8, 0)
    disc["disc.out.w"][:] = 0.0
    disc["disc.out.b"][:] = 40.0  # discriminator optimum on identical inputs: D == 1
    comps = generator_components(Tensor(c.copy()), c, stft_t(Tensor(0.2 * c), cfg), cfg, as_param_tensors(disc))
    vals = {k: float(v.data) for k, v in comps.items()}
    zero = all(vals[k] == 0.0 for k in COMPONENTS if k != "consistency") and vals["consistency"] < 1e-10
    a = Tensor(rng.uniform(-math.pi, math.pi, (1, 20, 201)))
    b = Tensor(rng.uniform(-math.pi, math.pi, (1, 20, 201)))
    k = rng.integers(-4, 5, a.shape)
    inv = abs(float(phase_loss(Tensor(a.data + 2 * math.pi * k), b).data) - float(phase_loss(a, b).data))
    rand = {kk: Tensor(rng.uniform(0, 2)) for kk in COMPONENTS}
    w = LossWeights()
    tot = float(total_loss(rand, w).total.data)
    wsum = abs(tot - sum(getattr(w, kk) * float(rand[kk].data) for kk in COMPONENTS))
    ok = zero and inv < 1e-9 and wsum < 1e-12
    report(7, "loss semantics", ok, f"zero at target {zero} (consistency {vals['consistency']:.1e}), "
                                    f"2pi invariance {inv:.1e}, weighted-sum err {wsum:.1e}")
    assert ok


# -- 8 ------------------------------------------------------------------------------

def _overfit_run():
    scene = AcousticScene(room=RoomSpec((3.0, 4.0, 2.0), t60_s=0.15))
    rirs = scene.paths()
    plant = Plant.from_scene(scene, rirs)
    sample = make_task_sample(synth_speechlike(0, 32000), DegradationSpec("noise", snr_db=5.0, seed=1), scene, rirs)
    x, c = sample.x.samples[None], sample.c.samples[None]
    cfg = TOY_CONFIG
    params = as_param_tensors(init_params(cfg, 0))
    disc = as_param_tensors(init_disc_params(8, 1))
    weights = LossWeights(time=1.0, mag=0.0, complex=0.0, metric=0.0, phase=0.0, consistency=0.0)
    opt = AdamW(params, lr=OVERFIT["lr"], betas=(0.8, 0.99), weight_decay=0.01, grad_clip=OVERFIT["grad_clip"])
    for _ in range(OVERFIT["steps"]):
        r = forward(params, cfg, x, plant)
        rep = total_loss(generator_components(r.eh, c, r.y_spec, StftConfig(), disc), weights)
        opt.zero_grad()
        backward(rep.total)
        opt.step()
    r = forward(params, cfg, x, plant)
    return nmse(c[0], r.d[0]), nmse(c[0], r.eh.data[0])


@pytest.fixture(scope="module")
def denoise_runs(tmp_path_factory):
    """Desk denoise dataset plus toy models trained at lookahead 0 and 500 samples."""
    root = tmp_path_factory.mktemp("denoise")
    out = {"root": root}
    with CpuTimer() as t:
        cfg = load_config(None, DENOISE)
        generate_dataset(cfg, root / "data")
        train(cfg, root / "data", root / "la0")
        ident = evaluate(cfg, root / "data", "identity").report
        model = evaluate(cfg, root / "data", "model", load_generator(root / "la0" / "best.ckpt", cfg)).report
    out.update(cfg=cfg, ident=ident, la0=model, cpu=t.elapsed)
    cfg500 = load_config(None, DENOISE + ["model.lookahead_samples=500"])
    train(cfg500, root / "data", root / "la500")
    out["la500"] = evaluate(cfg500, root / "data", "model", load_generator(root / "la500" / "best.ckpt", cfg500)).report
    return out


@pytest.mark.slow
def test_criterion_08_training_efficacy(denoise_runs):
    with CpuTimer() as t:
        before, after = _overfit_run()
    ident, model = denoise_runs["ident"], denoise_runs["la0"]
    d_nmse = ident.nmse_db - model.nmse_db
    d_stoi = model.stoi - ident.stoi
    ok_a = after <= -15.0 and t.elapsed < 600
    ok_b = d_nmse >= 6.0 and d_stoi >= 0.05 and denoise_runs["cpu"] < 3600
    report(8, "training efficacy", ok_a and ok_b,
           f"overfit {before:.2f} -> {after:.2f} dB in {OVERFIT['steps']} steps ({t.elapsed:.0f}s cpu); "
           f"denoise set nmse {ident.nmse_db:.2f} -> {model.nmse_db:.2f} dB (+{d_nmse:.2f}), "
           f"stoi {ident.stoi:.3f} -> {model.stoi:.3f} (+{d_stoi:.3f}), {denoise_runs['cpu'] / 60:.1f} min cpu")
    assert ok_a and ok_b


# -- 9 ------------------------------------------------------------------------------

def test_criterion_09_ablation_machinery(tmp_path):
    from asetm.cli import main

    base = ["--set", "data.n_train=2", "--set", "data.n_val=1", "--set", "data.n_test=1",
            "--set", "data.segment_samples=16000", "--set", "optim.epochs=1"]
    assert main(["gen-data", *base, "--out", str(tmp_path / "data")]) == 0
    code = main(["sweep", *base, "--data", str(tmp_path / "data"), "--out", str(tmp_path / "sweep")])
    runs = sorted(p.name for p in (tmp_path / "sweep").iterdir())
    curves, tags = {}, set()
    for name in runs:
        with open(tmp_path / "sweep" / name / "curves.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(CURVE_FIELDS)
        curves[name] = tuple(float(r["total"]) for r in rows)
        tags.add(tuple(rows[0][k] for k in ("attention_on", "ssm_variant", "hybrid_loss_on")))
    distinct = len(set(curves.values())) == len(runs) and len(tags) == len(runs)
    ok = code == 0 and len(runs) == 4 and distinct
    report(9, "ablation machinery", ok, f"{len(runs)} runs ({', '.join(runs)}), distinct curves and flags {distinct}")
    assert ok


# -- 10 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_lookahead(denoise_runs):
    a, b = denoise_runs["la0"].nmse_db, denoise_runs["la500"].nmse_db
    ok = abs(a - b) <= 1.0
    report(10, "lookahead", ok, f"test nmse {a:.2f} dB at 0 vs {b:.2f} dB at 500 samples (diff {abs(a - b):.2f} dB)")
    assert ok


# -- 11 -----------------------------------------------------------------------------

def test_criterion_11_metrics():
    u = synth_speechlike(11, 32000).samples
    worst = max(abs(nmse(u, u + a * u) - 20 * math.log10(a)) for a in (1e-3, 0.01, 0.1, 0.5, 1.0))
    ident = abs(stoi(u, u) - 1.0)
    noisy = u + 0.3 * np.random.default_rng(11).standard_normal(u.size)
    gain = abs(stoi(u, 0.25 * noisy) - stoi(u, noisy))
    ok = worst < 1e-9 and ident < 1e-6 and gain < 1e-6
    report(11, "metrics", ok, f"nmse scaling err {worst:.1e}, stoi(x,x)-1 {ident:.1e}, gain invariance {gain:.1e}")
    assert ok
