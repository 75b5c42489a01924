"""Adversarial training loop with deterministic resume.

Each step takes one generator update over a batch (per-item gradients are
accumulated in manifest order, since items may sit in different plants) and
then one discriminator update on the detached enhanced magnitudes.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamW, Tensor, backward, no_grad
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import RirCache, load_audio, read_manifest
from .losses import (COMPONENTS, TrainingAbort, generator_components, metric_losses, proxy_labels,
                     total_loss)
from .losses import init_disc_params
from .metrics import nmse, stoi
from .model import Plant, forward, init_params
from .model.layers import as_param_tensors
from .model.spectral import magnitude, stft_t

CURVE_FIELDS = ("step", "epoch", "total") + COMPONENTS + ("disc", "attention_on", "ssm_variant",
                                                          "hybrid_loss_on")
VAL_FIELDS = ("epoch", "step", "val_nmse_db", "val_stoi", "best", "attention_on", "ssm_variant",
              "hybrid_loss_on")
LAST = "last.ckpt"
BEST = "best.ckpt"


@dataclass
class Item:
    utt_id: str
    x: np.ndarray
    c: np.ndarray
    plant: Plant


@dataclass
class TrainState:
    epoch: int = 0
    batch_in_epoch: int = 0
    step: int = 0
    best_stoi: float = -math.inf
    history: list = field(default_factory=list)


def load_items(cfg: ExperimentConfig, data_dir, split: str) -> list:
    entries = [e for e in read_manifest(data_dir) if e.split == split]
    cache = RirCache(cfg, Path(data_dir) / "rirs")
    items = []
    for e in entries:
        t60, lam = e.meta["t60"], e.meta["lambda_sq"]
        plant = Plant.from_scene(cache.scene(t60, lam), cache.paths(t60))
        items.append(Item(e.utt_id, load_audio(e, data_dir, "x"), load_audio(e, data_dir, "c"), plant))
    return items


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)


class Trainer:
    def __init__(self, cfg: ExperimentConfig, train_items: list, val_items: list, out_dir, log=None):
        if not train_items:
            raise ValueError("no training items")
        self.cfg = cfg
        self.train_items = train_items
        self.val_items = val_items
        self.out = Path(out_dir)
        self.log = log or (lambda msg: None)
        o = cfg.optim
        self.params = as_param_tensors(init_params(cfg.model, cfg.seed))
        self.disc = as_param_tensors(init_disc_params(cfg.model.disc_channels, cfg.seed + 1))
        clip = o.grad_clip or None
        self.opt = AdamW(self.params, o.lr, (o.beta1, o.beta2), weight_decay=o.weight_decay, grad_clip=clip)
        self.disc_opt = AdamW(self.disc, o.disc_lr, (o.beta1, o.beta2), weight_decay=o.weight_decay,
                              grad_clip=clip)
        self.state = TrainState()
        self.use_disc = cfg.loss.metric > 0

    # -- checkpoints -------------------------------------------------------------

    def _flags(self) -> dict:
        m = self.cfg.model
        return {"attention_on": int(m.attention_on), "ssm_variant": m.ssm_variant,
                "hybrid_loss_on": int(self.cfg.hybrid_loss_on)}

    def checkpoint_tensors(self) -> dict:
        t = {f"gen.{k}": p.data for k, p in self.params.items()}
        t.update({f"dis.{k}": p.data for k, p in self.disc.items()})
        t.update(self.opt.state_tensors("adam.gen"))
        t.update(self.disc_opt.state_tensors("adam.dis"))
        s = self.state
        t["state.counters"] = np.array([s.epoch, s.batch_in_epoch, s.step, s.best_stoi], dtype=np.float64)
        return t

    def save(self, name: str = LAST) -> Path:
        return save_checkpoint(self.out / name, self.checkpoint_tensors())

    def restore(self, path) -> None:
        t = load_checkpoint(path)
        for prefix, params in (("gen.", self.params), ("dis.", self.disc)):
            for k, p in params.items():
                if prefix + k not in t:
                    raise ValueError(f"{path}: missing tensor {prefix + k}")
                if t[prefix + k].shape != p.data.shape:
                    raise ValueError(f"{path}: {prefix + k} has shape {t[prefix + k].shape}, "
                                     f"model expects {p.data.shape}")
                p.data = t[prefix + k].copy()
        self.opt.load_state_tensors(t, "adam.gen")
        self.disc_opt.load_state_tensors(t, "adam.dis")
        e, b, s, best = t["state.counters"]
        self.state = TrainState(int(e), int(b), int(s), float(best))

    # -- steps ------------------------------------------------------------------------

    def generator_step(self, batch: list) -> dict:
        cfg = self.cfg
        self.opt.zero_grad()
        sums = dict.fromkeys(COMPONENTS + ("total",), 0.0)
        outputs = []
        for it in batch:
            r = forward(self.params, cfg.model, it.x, it.plant, cfg.stft)
            comps = generator_components(r.eh, it.c, r.y_spec, cfg.stft, self.disc, cfg.hybrid_loss_on)
            rep = total_loss(comps, cfg.loss)
            loss = rep.total if len(batch) == 1 else rep.total * (1.0 / len(batch))
            backward(loss)
            for k, v in rep.values.items():
                sums[k] += v / len(batch)
            outputs.append(r.eh.data[0].copy())
        for k, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingAbort(f"gradient of {k} is not finite")
        self.opt.step()
        # discriminator params collect grads from the generator pass; drop them
        self.disc_opt.zero_grad()
        sums["_eh"] = outputs
        return sums

    def disc_step(self, batch: list, enhanced: list) -> float:
        cfg = self.cfg
        self.disc_opt.zero_grad()
        total = 0.0
        for it, eh in zip(batch, enhanced):
            labels = proxy_labels(it.c, eh)
            with no_grad():
                en_m = magnitude(stft_t(Tensor(eh[None]), cfg.stft))
                c_m = magnitude(stft_t(Tensor(it.c[None]), cfg.stft))
            term = metric_losses(en_m, c_m, self.disc, labels)["disc_term"]
            if not np.isfinite(term.data):
                raise TrainingAbort("discriminator loss is not finite")
            backward(term * (1.0 / len(batch)))
            total += float(term.data) / len(batch)
        self.disc_opt.step()
        return total

    def validate(self) -> tuple:
        items = self.val_items or self.train_items
        ns, ss = [], []
        with no_grad():
            for it in items:
                r = forward(self.params, self.cfg.model, it.x, it.plant, self.cfg.stft)
                eh = r.eh.data[0]
                ns.append(nmse(it.c, eh))
                ss.append(stoi(it.c, eh, self.cfg.data.sample_rate_hz))
        return float(np.mean(ns)), float(np.mean(ss))

    # -- loop ----------------------------------------------------------------------------

    def _write_row(self, name, fields, row) -> None:
        path = self.out / name
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            if new:
                w.writeheader()
            w.writerow(row)

    def _fmt(self, v):
        return f"{v:.9g}" if isinstance(v, float) else v

    def run(self, max_steps: int | None = None) -> TrainState:
        cfg, st = self.cfg, self.state
        o = cfg.optim
        self.out.mkdir(parents=True, exist_ok=True)
        limit = max_steps if max_steps is not None else (o.max_steps or None)
        n = len(self.train_items)
        n_batches = math.ceil(n / o.batch)
        flags = self._flags()
        while st.epoch < o.epochs:
            order = epoch_order(cfg.seed, st.epoch, n)
            while st.batch_in_epoch < n_batches:
                if limit is not None and st.step >= limit:
                    self.save()
                    return st
                idx = order[st.batch_in_epoch * o.batch:(st.batch_in_epoch + 1) * o.batch]
                batch = [self.train_items[i] for i in idx]
                t0 = time.perf_counter()
                vals = self.generator_step(batch)
                enhanced = vals.pop("_eh")
                disc = self.disc_step(batch, enhanced) if self.use_disc else 0.0
                st.step += 1
                st.batch_in_epoch += 1
                row = {"step": st.step, "epoch": st.epoch, "disc": disc, **vals, **flags}
                st.history.append(row)
                self._write_row("curves.csv", CURVE_FIELDS, {k: self._fmt(row[k]) for k in CURVE_FIELDS})
                self.log(f"step {st.step} epoch {st.epoch} loss {vals['total']:.5f} "
                         f"({time.perf_counter() - t0:.1f}s)")
                if o.checkpoint_every and st.step % o.checkpoint_every == 0:
                    self.save()
            v_nmse, v_stoi = self.validate()
            best = v_stoi > st.best_stoi
            if best:
                st.best_stoi = v_stoi
            st.epoch += 1
            st.batch_in_epoch = 0
            if best:
                self.save(BEST)
            self.save()
            self._write_row("val.csv", VAL_FIELDS, {
                "epoch": st.epoch - 1, "step": st.step, "val_nmse_db": self._fmt(v_nmse),
                "val_stoi": self._fmt(v_stoi), "best": int(best), **flags})
            self.log(f"epoch {st.epoch - 1} val nmse {v_nmse:.2f} dB stoi {v_stoi:.3f}"
                     f"{' (best)' if best else ''}")
        return st


def train(cfg: ExperimentConfig, data_dir, out_dir, resume: bool = False, max_steps: int | None = None,
          log=None) -> Trainer:
    """Train from a generated dataset; raises :class:`TrainingAbort` on a non-finite loss.

    On abort the on-disk ``last.ckpt`` is the last good state.
    """
    trainer = Trainer(cfg, load_items(cfg, data_dir, "train"), load_items(cfg, data_dir, "val"), out_dir, log)
    last = Path(out_dir) / LAST
    if resume:
        if not last.exists():
            raise ValueError(f"cannot resume: {last} does not exist")
        trainer.restore(last)
    elif Path(out_dir).exists():
        for name in ("curves.csv", "val.csv"):
            (Path(out_dir) / name).unlink(missing_ok=True)
    trainer.run(max_steps)
    return trainer


def load_generator(path, cfg: ExperimentConfig) -> dict:
    """Generator parameter tensors from a training checkpoint (or a bare parameter file)."""
    t = load_checkpoint(path)
    ref = init_params(cfg.model, 0)
    out = {}
    for k, arr in ref.items():
        key = f"gen.{k}" if f"gen.{k}" in t else k
        if key not in t:
            raise ValueError(f"{path}: missing parameter {k}")
        if t[key].shape != arr.shape:
            raise ValueError(f"{path}: parameter {k} has shape {t[key].shape}, config expects {arr.shape}")
        out[k] = t[key]
    return as_param_tensors(out)
