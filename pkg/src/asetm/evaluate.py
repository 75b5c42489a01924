"""Test-set evaluation of a trained model, the silent-speaker identity, or an adaptive baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustics import propagate
from .adaptive import AdaptiveFilterState, estimate_secondary, fxlms_run
from .autodiff import no_grad
from .config import ExperimentConfig
from .data import RirCache, condition_grid, load_audio, read_manifest, target_at
from .dsp import Waveform, bin_frequencies, power_spectrum_db
from .metrics import EvalReport, write_spectrum_csv
from .model import Plant, forward

MODES = ("model", "identity", "fxlms", "fxnlms", "thf")


@dataclass
class EvalOutput:
    report: EvalReport
    freqs: np.ndarray
    spectra: dict  # clean / degraded / enhanced mean power in dB


def _run_baseline(cfg: ExperimentConfig, mode: str, x, c, scene, rirs, seed: int):
    b = cfg.baseline
    if b.identify_secondary:
        probe = int(b.probe_seconds * cfg.data.sample_rate_hz)
        shat = estimate_secondary(scene, rirs, probe, seed=seed, n_taps=min(b.filter_len, scene.rir_len)).taps
    else:
        shat = rirs[1].taps
    state = AdaptiveFilterState.fresh(shat, b.filter_len, mode, b.mu, b.lambda_sq_est)
    return fxlms_run(x, c, scene, rirs, state, b.error_source)


def evaluate(cfg: ExperimentConfig, data_dir, mode: str = "model", params=None, grid: bool = False,
             split: str = "test", log=None) -> EvalOutput:
    """Score every ``split`` utterance.

    With ``grid`` each utterance is re-rendered under every (T60, lambda^2)
    cell of the condition grid, recomputing the T60-dependent target;
    otherwise each one is scored at the condition recorded in the manifest.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "model" and params is None:
        raise ValueError("model evaluation needs a checkpoint")
    entries = [e for e in read_manifest(data_dir) if e.split == split]
    if not entries:
        raise ValueError(f"no {split!r} items in {data_dir}")
    cache = RirCache(cfg, Path(data_dir) / "rirs")
    rate = cfg.data.sample_rate_hz
    report = EvalReport()
    acc = {"clean": 0.0, "degraded": 0.0, "enhanced": 0.0}
    cells = condition_grid(cfg) if grid else None
    for k, e in enumerate(entries):
        x = load_audio(e, data_dir, "x")
        s = load_audio(e, data_dir, "s")
        for t60, lam in cells or [(e.meta["t60"], e.meta["lambda_sq"])]:
            rirs = cache.paths(t60)
            scene = cache.scene(t60, lam)
            c = target_at(cfg.task, s, rirs, rate) if grid else load_audio(e, data_dir, "c")
            if mode == "identity":
                # silent loudspeaker: the mic hears the primary field only
                d = propagate(Waveform(x, rate), rirs[0]).samples
                eh = d
            elif mode == "model":
                with no_grad():
                    r = forward(params, cfg.model, x, Plant.from_scene(scene, rirs), cfg.stft)
                eh, d = r.eh.data[0], r.d[0]
            else:
                res = _run_baseline(cfg, mode, x, c, scene, rirs, cfg.seed + k)
                eh, d = res.eh, res.d
            report.add(e.utt_id, cfg.task, t60, lam, c, eh, rate)
            for key, sig in (("clean", c), ("degraded", d), ("enhanced", eh)):
                acc[key] = acc[key] + 10.0 ** (power_spectrum_db(sig, cfg.stft) / 10.0)
            if log:
                row = report.rows[-1]
                log(f"{e.utt_id} t60={t60:g} lam={lam:g} nmse {row['nmse_db']:.2f} dB stoi {row['stoi']:.3f}")
    n = len(report.rows)
    spectra = {k: 10.0 * np.log10(np.maximum(v / n, 1e-12)) for k, v in acc.items()}
    return EvalOutput(report, bin_frequencies(cfg.stft, rate), spectra)


def write_outputs(out: EvalOutput, out_dir, tag: str = "eval") -> tuple:
    out_dir = Path(out_dir)
    rep = out_dir / f"{tag}_report.csv"
    spec = out_dir / f"{tag}_spectrum.csv"
    out.report.write_csv(rep)
    write_spectrum_csv(spec, out.freqs, out.spectra["clean"], out.spectra["degraded"], out.spectra["enhanced"])
    return rep, spec


def summary(report: EvalReport) -> str:
    lines = [f"mean nmse {report.nmse_db:.3f} dB  stoi {report.stoi:.4f}  segsnr {report.seg_snr_db:.3f} dB "
             f"({len(report.rows)} rows)"]
    groups = report.grouped()
    if len(groups) > 1:
        for (t60, lam), g in sorted(groups.items()):
            lam_s = "inf" if math.isinf(lam) else f"{lam:g}"
            lines.append(f"  t60={t60:g} lam={lam_s}: nmse {g.nmse_db:.3f} dB stoi {g.stoi:.4f}")
    return "\n".join(lines)
