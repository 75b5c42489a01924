"""Dataset synthesis: clean speech, per-task degradations, manifest and RIR cache.

Every random draw descends from one ``SeedSequence`` rooted at the experiment
seed, spawned per split and per item, so the same config always produces
the same files and a byte-identical manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustics import AcousticScene, Rir, RoomSpec, read_rir, simulate_rir, write_rir
from .config import TASKS, ExperimentConfig
from .degradations import DegradationSpec, make_task_sample, peak_normalize, synth_speechlike, target_for
from .dsp import Waveform, read_wav, resample, write_wav

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.tsv"
MANIFEST_HEADER = "# id\ttask\tpaths\tmeta"


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    task: str
    paths: dict
    meta: dict

    @property
    def split(self) -> str:
        return self.meta["split"]

    def line(self) -> str:
        paths = ",".join(f"{k}={v}" for k, v in sorted(self.paths.items()))
        return f"{self.utt_id}\t{self.task}\t{paths}\t{json.dumps(self.meta, sort_keys=True)}"

    @classmethod
    def parse(cls, line: str) -> "ManifestEntry":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise ValueError(f"manifest line needs 4 tab-separated fields, got {len(parts)}")
        paths = dict(p.split("=", 1) for p in parts[2].split(",") if p)
        return cls(parts[0], parts[1], paths, json.loads(parts[3]))


def read_manifest(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ValueError(f"cannot read manifest {path}: {exc}") from None
    return [ManifestEntry.parse(ln) for ln in lines if ln and not ln.startswith("#")]


def load_audio(entry: ManifestEntry, root, key: str) -> np.ndarray:
    return read_wav(Path(root) / entry.paths[key]).samples


# -- scenes and RIRs -------------------------------------------------------------

def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:g}"


def scene_id(t60: float, lambda_sq: float) -> str:
    return f"t60={_fmt(t60)},lam={_fmt(lambda_sq)}"


class RirCache:
    """Plant RIRs per T60, simulated once and optionally persisted to ``root``."""

    def __init__(self, cfg: ExperimentConfig, root=None):
        self.cfg = cfg
        self.root = Path(root) if root is not None else None
        self._mem: dict = {}

    def _files(self, t60):
        tag = f"t60_{_fmt(t60)}"
        return self.root / f"{tag}_primary.rir", self.root / f"{tag}_secondary.rir"

    def paths(self, t60: float) -> tuple:
        t60 = float(t60)
        if t60 in self._mem:
            return self._mem[t60]
        scene = self.cfg.scene.scene(t60, math.inf)
        rirs = None
        if self.root is not None:
            fp, fs = self._files(t60)
            if fp.exists() and fs.exists():
                (p, mp), (s, _) = read_rir(fp), read_rir(fs)
                if len(p) == scene.rir_len and mp.get("room") == str(scene.room.dims_m):
                    rirs = (Rir(p.taps, "primary"), Rir(s.taps, "secondary"))
        if rirs is None:
            rirs = scene.paths()
            if self.root is not None:
                meta = {"t60_s": t60, "room": str(scene.room.dims_m), "taps": scene.rir_len}
                fp, fs = self._files(t60)
                write_rir(fp, rirs[0], meta)
                write_rir(fs, rirs[1], meta)
        self._mem[t60] = rirs
        return rirs

    def scene(self, t60: float, lambda_sq: float) -> AcousticScene:
        return self.cfg.scene.scene(t60, lambda_sq)


def condition_grid(cfg: ExperimentConfig) -> list:
    """(T60, lambda^2) cells for evaluation: the eval lists if given, else the scene sets."""
    t60s = cfg.scene.eval_t60s or cfg.scene.t60_set
    lams = cfg.scene.eval_lambda_sqs or cfg.scene.lambda_sq_set
    return [(float(t), float(l)) for t in t60s for l in lams]


# -- clean speech -------------------------------------------------------------------

def _source_files(source_dir) -> list:
    files = sorted(Path(source_dir).rglob("*.wav"))
    if not files:
        raise ValueError(f"no .wav files under {source_dir}")
    return files


def clean_segment(cfg: ExperimentConfig, rng: np.random.Generator, sources=None) -> Waveform:
    n, rate = cfg.data.segment_samples, cfg.data.sample_rate_hz
    if not sources:
        return synth_speechlike(int(rng.integers(2 ** 31)), n, rate)
    path = sources[int(rng.integers(len(sources)))]
    w = read_wav(path)
    if w.sample_rate_hz != rate:
        w = resample(w, rate)
    x = w.samples
    if x.size > n:
        start = int(rng.integers(x.size - n + 1))
        x = x[start: start + n]
    else:
        x = np.pad(x, (0, n - x.size))
    if not np.any(x):
        raise ValueError(f"{path}: selected segment is silent")
    return peak_normalize(Waveform(x, rate))


def _reverb_rir(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple:
    """A random source/listener pair in the configured room at a random T60."""
    lo, hi = cfg.data.reverb_t60_range[:2]
    t60 = float(rng.uniform(lo, hi))
    room = RoomSpec(tuple(cfg.scene.room_m), t60_s=t60)
    dims = np.asarray(room.dims_m)
    margin = 0.3
    src = tuple(rng.uniform(margin, dims - margin))
    mic = tuple(rng.uniform(margin, dims - margin))
    rir = simulate_rir(room, src, mic, cfg.data.reverb_rir_len, seed=int(rng.integers(2 ** 31)))
    # keep the direct path at lag zero so the target stays time-aligned
    taps = rir.taps[int(np.argmax(np.abs(rir.taps))):]
    return Rir(taps / np.max(np.abs(taps)), "primary"), t60


def degradation_for(cfg: ExperimentConfig, split: str, index: int, rng: np.random.Generator) -> tuple:
    d = cfg.data
    seed = int(rng.integers(2 ** 31))
    kind = cfg.degradation_kind
    if kind == "noise":
        grid = d.test_snrs if split == "test" else d.train_snrs
        snr = float(grid[index % len(grid)] if split == "test" else grid[int(rng.integers(len(grid)))])
        return DegradationSpec("noise", snr_db=snr, noise_kind=d.noise_kind, seed=seed), {"snr_db": snr}
    if kind == "clip":
        lo, hi = d.clip_train_range[:2]
        eta = float(d.clip_test_eta if split == "test" else rng.uniform(lo, hi))
        return DegradationSpec("clip", eta=eta, seed=seed), {"eta": eta}
    rir, t60 = _reverb_rir(cfg, rng)
    return DegradationSpec("reverb", rir=rir, seed=seed), {"reverb_t60_s": t60}


def _split_sizes(cfg: ExperimentConfig) -> dict:
    return {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}


def generate_dataset(cfg: ExperimentConfig, out_dir, log=None) -> list:
    """Write WAVs, cached RIRs and the manifest under ``out_dir``; return the entries."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset dir {out}: {exc}") from None
    cache = RirCache(cfg, out / "rirs")
    sources = _source_files(cfg.data.source_dir) if cfg.data.source_dir else None
    grid = condition_grid(cfg)
    root = np.random.SeedSequence(cfg.seed)
    entries = []
    for split, ss in zip(SPLITS, root.spawn(len(SPLITS))):
        n = _split_sizes(cfg)[split]
        for i, item_ss in enumerate(ss.spawn(n)):
            rng = np.random.default_rng(item_ss)
            s = clean_segment(cfg, rng, sources)
            if split == "test":
                t60, lam = grid[i % len(grid)]
            else:
                t60 = float(cfg.scene.t60_set[int(rng.integers(len(cfg.scene.t60_set)))])
                lam = float(cfg.scene.lambda_sq_set[int(rng.integers(len(cfg.scene.lambda_sq_set)))])
            spec, info = degradation_for(cfg, split, i, rng)
            rirs = cache.paths(t60)
            sample = make_task_sample(s, spec, cache.scene(t60, lam), rirs, scene_id=scene_id(t60, lam))
            uid = f"{cfg.task}-{split}-{i:05d}"
            paths = {}
            for key, w in (("s", s), ("x", sample.x), ("c", sample.c)):
                rel = f"{split}/{uid}_{key}.wav"
                try:
                    write_wav(out / rel, w)
                except OSError as exc:
                    raise OSError(f"cannot write {out / rel}: {exc}") from None
                paths[key] = rel
            meta = {"split": split, "t60": t60, "lambda_sq": lam, "scene": scene_id(t60, lam),
                    "spec": json.loads(spec.to_json()), **info}
            entries.append(ManifestEntry(uid, cfg.task, paths, meta))
            if log:
                log(f"{uid} {scene_id(t60, lam)} {info}")
    text = "\n".join([MANIFEST_HEADER] + [e.line() for e in entries]) + "\n"
    (out / MANIFEST).write_text(text)
    return entries


def target_at(task: str, s: np.ndarray, rirs, sample_rate_hz: int = 16000) -> np.ndarray:
    """Task target for clean ``s`` under plant ``rirs`` (noise targets depend on P)."""
    return target_for(TASKS[task], Waveform(s, sample_rate_hz), rirs).samples
