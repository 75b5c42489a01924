"""Command-line entry point: ``asetm <verb> [options]``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid configuration,
3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .losses import TrainingAbort

log = logging.getLogger("asetm")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
ABLATION_AXES = {
    "attention_on": ("model.attention_on", ("true", "false")),
    "ssm_variant": ("model.ssm_variant", ("m2", "m1")),
    "hybrid_loss_on": ("experiment.hybrid_loss_on", ("true", "false")),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", type=Path, help="experiment INI file (defaults: desk profile)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asetm", description="Active speech enhancement testbed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="synthesise a dataset and manifest")
    _common(p)
    p.add_argument("--out", "-o", type=Path, required=True)

    p = sub.add_parser("train", help="train the model on a generated dataset")
    _common(p)
    p.add_argument("--data", "-d", type=Path, required=True)
    p.add_argument("--out", "-o", type=Path, required=True)
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    p.add_argument("--max-steps", type=int, help="stop after this many optimiser steps")

    p = sub.add_parser("eval", help="score a checkpoint or a baseline on the test split")
    _common(p)
    p.add_argument("--data", "-d", type=Path, required=True)
    p.add_argument("--out", "-o", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--baseline", choices=("identity", "fxlms", "fxnlms", "thf"))
    p.add_argument("--grid", action="store_true", help="evaluate every utterance on the full condition grid")
    p.add_argument("--tag", default="eval", help="prefix of the output CSV names")

    p = sub.add_parser("sweep", help="train one run per ablation setting")
    _common(p)
    p.add_argument("--data", "-d", type=Path, required=True)
    p.add_argument("--out", "-o", type=Path, required=True)
    p.add_argument("--axes", default="attention_on,ssm_variant,hybrid_loss_on",
                   help="comma-separated ablation axes to flip")
    p.add_argument("--full", action="store_true", help="full cross product instead of one flip per axis")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("rir-cache", help="simulate and store the plant RIRs for every configured T60")
    _common(p)
    p.add_argument("--out", "-o", type=Path, required=True)

    p = sub.add_parser("grad-check", help="finite-difference checks of primitives, losses and the model")
    _common(p)
    p.add_argument("--skip-model", action="store_true", help="only primitives and losses")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    _common(p)
    return ap


def cmd_gen_data(cfg, args) -> int:
    from .data import generate_dataset

    entries = generate_dataset(cfg, args.out, log=log.debug)
    (args.out / "config.ini").write_text(dump_config(cfg))
    print(f"wrote {len(entries)} items to {args.out}")
    return EXIT_OK


def _save_config(cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))


def cmd_train(cfg, args) -> int:
    from .train import train

    _save_config(cfg, args.out)
    tr = train(cfg, args.data, args.out, resume=args.resume, max_steps=args.max_steps, log=log.info)
    st = tr.state
    print(f"trained {st.step} steps ({st.epoch} epochs), best val stoi {st.best_stoi:.4f}; "
          f"checkpoints in {args.out}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    from .evaluate import evaluate, summary, write_outputs
    from .train import load_generator

    if args.checkpoint is not None:
        if not args.checkpoint.exists():
            raise ValueError(f"checkpoint {args.checkpoint} does not exist")
        out = evaluate(cfg, args.data, "model", load_generator(args.checkpoint, cfg), grid=args.grid,
                       log=log.debug)
    else:
        out = evaluate(cfg, args.data, args.baseline, grid=args.grid, log=log.debug)
    rep, spec = write_outputs(out, args.out, args.tag)
    print(summary(out.report))
    print(f"wrote {rep} and {spec}")
    return EXIT_OK


def sweep_settings(axes: list, full: bool) -> list:
    """List of (run name, overrides). The first run is the all-default reference."""
    for a in axes:
        if a not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {a!r}; choose from {sorted(ABLATION_AXES)}")
    if full:
        runs = []
        for values in itertools.product(*(ABLATION_AXES[a][1] for a in axes)):
            name = "_".join(f"{a}-{v}" for a, v in zip(axes, values))
            runs.append((name, [f"{ABLATION_AXES[a][0]}={v}" for a, v in zip(axes, values)]))
        return runs
    runs = [("reference", [])]
    for a in axes:
        key, values = ABLATION_AXES[a]
        runs.append((f"{a}-{values[1]}", [f"{key}={values[1]}"]))
    return runs


def cmd_sweep(cfg_path, overrides, args) -> int:
    from .train import train

    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    for name, extra in sweep_settings(axes, args.full):
        cfg = load_config(cfg_path, list(overrides) + extra)
        out = args.out / name
        _save_config(cfg, out)
        print(f"[{name}] {cfg.ablation_tag()}")
        tr = train(cfg, args.data, out, max_steps=args.max_steps, log=log.info)
        print(f"[{name}] {tr.state.step} steps, final loss {tr.state.history[-1]['total']:.5f}")
    return EXIT_OK


def cmd_rir_cache(cfg, args) -> int:
    from .data import RirCache

    cache = RirCache(cfg, args.out)
    t60s = sorted(set(cfg.scene.t60_set) | set(cfg.scene.eval_t60s))
    for t in t60s:
        p, s = cache.paths(t)
        print(f"t60={t:g}s primary {len(p)} taps, secondary {len(s)} taps")
    return EXIT_OK


def cmd_grad_check(cfg, args) -> int:
    from .autodiff import grad_check
    from .checks import loss_cases, model_check, primitive_cases

    failed = 0
    for group, cases, h in (("primitive", primitive_cases(args.seed), 1e-5),
                            ("loss", loss_cases(args.seed), 1e-4)):
        for name, (f, inputs) in cases.items():
            rep = grad_check(f, inputs, h=h, tol=1e-5)
            failed += not rep.passed
            print(f"{group:9s} {name:24s} {rep}")
    if not args.skip_model:
        rep = model_check(args.seed, cfg=replace(cfg.model, lookahead_samples=0))
        failed += not rep.passed
        print(f"{'model':9s} {'end-to-end':24s} {rep}")
    print("all passed" if not failed else f"{failed} check(s) failed")
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "rir-cache": cmd_rir_cache,
            "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        if args.verb == "sweep":
            load_config(args.config, args.overrides)  # fail fast on a bad base config
            return cmd_sweep(args.config, args.overrides, args)
        cfg = load_config(args.config, args.overrides)
        if args.verb == "show-config":
            print(dump_config(cfg), end="")
            return EXIT_OK
        return COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as exc:
        print(f"numeric abort: {exc} (last good checkpoint kept)", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
