"""Experiment configuration: an INI file with one section per concern.

Unknown sections or keys are errors, as are values that violate a module
invariant, so a typo cannot silently fall back to a default. Lists are
comma-separated; ``inf`` is accepted wherever a float is.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .acoustics import (LAMBDA_SQ_GRID, PAPER_MOD_MIC, PAPER_REF_MIC, PAPER_RIR_LEN, PAPER_ROOM_DIMS,
                        PAPER_SPEAKER, T60_GRID, AcousticScene, RoomSpec)
from .dsp import StftConfig
from .losses import LossWeights
from .model.config import PAPER_CONFIG, ModelConfig

TASKS = {"denoise": "noise", "dereverb": "reverb", "declip": "clip"}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SceneConfig:
    room_m: tuple = PAPER_ROOM_DIMS
    ref_mic: tuple = PAPER_REF_MIC
    mod_mic: tuple = PAPER_MOD_MIC
    speaker: tuple = PAPER_SPEAKER
    rir_len: int = PAPER_RIR_LEN
    t60_set: tuple = (0.15,)
    lambda_sq_set: tuple = (math.inf,)
    eval_t60s: tuple = ()
    eval_lambda_sqs: tuple = ()

    def scene(self, t60: float, lambda_sq: float) -> AcousticScene:
        room = RoomSpec(tuple(self.room_m), t60_s=float(t60))
        return AcousticScene(room, tuple(self.ref_mic), tuple(self.mod_mic), tuple(self.speaker),
                             self.rir_len, float(lambda_sq))


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 20
    n_val: int = 4
    n_test: int = 8
    segment_samples: int = 32000
    sample_rate_hz: int = 16000
    noise_kind: str = "pink"
    train_snrs: tuple = (5.0,)
    test_snrs: tuple = (5.0,)
    clip_train_range: tuple = (0.1, 0.5)
    clip_test_eta: float = 0.25
    reverb_t60_range: tuple = (0.3, 0.8)
    reverb_rir_len: int = 4000
    source_dir: str = ""


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-4
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    epochs: int = 30
    batch: int = 1
    grad_clip: float = 0.0
    max_steps: int = 0
    disc_lr: float = 5e-4
    checkpoint_every: int = 0


@dataclass(frozen=True)
class BaselineConfig:
    variant: str = "fxlms"
    mu: float = 1e-4
    filter_len: int = 512
    error_source: str = "oracle"
    lambda_sq_est: float = math.inf
    identify_secondary: bool = False
    probe_seconds: float = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "denoise"
    seed: int = 0
    profile: str = "desk"
    hybrid_loss_on: bool = True
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    @property
    def degradation_kind(self) -> str:
        return TASKS[self.task]

    def ablation_tag(self) -> str:
        m = self.model
        return (f"att{'on' if m.attention_on else 'off'}_{m.ssm_variant}_"
                f"hyb{'on' if self.hybrid_loss_on else 'off'}")


# section name -> (attribute on ExperimentConfig, dataclass type); None attr = top level
SECTIONS = {
    "experiment": None,
    "scene": "scene",
    "data": "data",
    "stft": "stft",
    "model": "model",
    "loss": "loss",
    "optim": "optim",
    "baseline": "baseline",
}
# the three ablation switches live together in their own section
ABLATION_KEYS = {"attention_on": ("model", "attention_on"), "ssm_variant": ("model", "ssm_variant"),
                 "hybrid_loss_on": (None, "hybrid_loss_on")}
TOP_LEVEL = ("task", "seed", "profile", "hybrid_loss_on")


def paper_profile() -> ExperimentConfig:
    """Paper-scale settings. Not desk-verifiable: training takes GPU-days."""
    scene = SceneConfig(t60_set=T60_GRID, lambda_sq_set=LAMBDA_SQ_GRID)
    data = DataConfig(n_train=10000, n_val=500, n_test=800, train_snrs=(0.0, 5.0, 10.0, 15.0),
                      test_snrs=(2.5, 7.5, 12.5, 17.5))
    optim = OptimConfig(epochs=350, batch=4)
    return ExperimentConfig(profile="paper", scene=scene, data=data, model=PAPER_CONFIG, optim=optim)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    return float(text.strip())  # float() already accepts inf/nan spellings


def _coerce(text: str, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text.strip())
    if isinstance(default, float):
        return _parse_float(text)
    if isinstance(default, tuple):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        return tuple(_parse_float(t) for t in items)
    return text.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def _apply(cfg: ExperimentConfig, section: str, key: str, raw: str) -> ExperimentConfig:
    if section == "ablation":
        if key not in ABLATION_KEYS:
            raise ConfigError(f"[ablation] has no key {key!r}; expected one of {sorted(ABLATION_KEYS)}")
        section, key = ABLATION_KEYS[key]
        section = section or "experiment"
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    attr = SECTIONS[section]
    target = cfg if attr is None else getattr(cfg, attr)
    names = {f.name for f in fields(target)} if attr else set(TOP_LEVEL)
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    default = getattr(target, key)
    try:
        value = _coerce(raw, default)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
    try:
        if attr is None:
            return replace(cfg, **{key: value})
        return replace(cfg, **{attr: replace(target, **{key: value})})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.task not in TASKS:
        raise ConfigError(f"task must be one of {sorted(TASKS)}, got {cfg.task!r}")
    if cfg.profile not in ("desk", "paper"):
        raise ConfigError(f"profile must be 'desk' or 'paper', got {cfg.profile!r}")
    if cfg.model.n_freq != cfg.stft.n_freq:
        raise ConfigError(f"model n_freq={cfg.model.n_freq} but STFT gives {cfg.stft.n_freq} bins")
    s = cfg.scene
    if not s.t60_set or not s.lambda_sq_set:
        raise ConfigError("scene t60_set and lambda_sq_set must be non-empty")
    try:
        for t60 in set(s.t60_set) | set(s.eval_t60s):
            for lam in set(s.lambda_sq_set) | set(s.eval_lambda_sqs):
                s.scene(t60, lam)
    except ValueError as exc:
        raise ConfigError(f"invalid scene: {exc}") from None
    d = cfg.data
    if min(d.n_train, d.n_test) < 1 or d.n_val < 0:
        raise ConfigError("need n_train >= 1, n_test >= 1 and n_val >= 0")
    if d.segment_samples <= cfg.stft.win_len:
        raise ConfigError("segment_samples must exceed the STFT window")
    if d.sample_rate_hz <= 0:
        raise ConfigError("sample_rate_hz must be positive")
    if d.noise_kind not in ("pink", "babble", "white", "mixed"):
        raise ConfigError(f"unknown noise_kind {d.noise_kind!r}")
    lo, hi = (d.clip_train_range + (None, None))[:2]
    if lo is None or hi is None or not 0 < lo <= hi <= 1 or not 0 < d.clip_test_eta <= 1:
        raise ConfigError("clipping thresholds must lie in (0, 1]")
    if cfg.model.lookahead_samples >= d.segment_samples:
        raise ConfigError("lookahead must be shorter than a segment")
    o = cfg.optim
    if o.lr <= 0 or o.disc_lr <= 0 or not (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1) or o.weight_decay < 0:
        raise ConfigError("invalid optimiser settings")
    if o.epochs < 1 or o.batch < 1 or o.max_steps < 0 or o.grad_clip < 0:
        raise ConfigError("epochs and batch must be >= 1; max_steps and grad_clip >= 0")
    b = cfg.baseline
    if b.variant not in ("fxlms", "fxnlms", "thf") or b.error_source not in ("oracle", "mic"):
        raise ConfigError(f"invalid baseline variant/error_source {b.variant!r}/{b.error_source!r}")
    if b.mu < 0 or b.filter_len < 1 or b.filter_len > s.rir_len and b.identify_secondary:
        raise ConfigError("invalid baseline mu / filter_len")
    return cfg


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    profile = parser.get("experiment", "profile", fallback="desk").strip()
    cfg = paper_profile() if profile == "paper" else ExperimentConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _apply(cfg, section, key, raw)
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}")
        lhs, raw = ov.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key, raw)
    return validate(cfg)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    if path is None:
        return parse_config("", overrides)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`parse_config` maps back to ``cfg``."""
    lines = ["[experiment]"]
    lines += [f"{k} = {_format(getattr(cfg, k))}" for k in TOP_LEVEL]
    for section, attr in SECTIONS.items():
        if attr is None:
            continue
        lines += ["", f"[{section}]"]
        obj = getattr(cfg, attr)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
