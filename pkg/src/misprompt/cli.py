"""Command-line driver.

    python -m misprompt <verb> [--config PATH] [--out DIR] [--seed N] [--mode M]

Exit codes: 0 success, 2 configuration or missing-stage error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DependencyError, NumericError, RangeError

VERBS = ("run", "pretrain", "train", "eval", "sweep-eta", "sweep-layers", "sweep-length", "params")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="misprompt", description="Missing-aware prompt experiments.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", type=Path, help="INI-style experiment config (defaults if omitted)")
    p.add_argument("--out", type=Path, default=Path("runs/default"), help="artifacts directory")
    p.add_argument("--seed", type=int, help="override [data] seed")
    p.add_argument("--mode", choices=("baseline", "input", "attention"), help="override [prompt] mode")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(data={"seed": args.seed})
    if args.mode is not None:
        cfg = cfg.replace(prompt={"mode": args.mode})
    return cfg


def dispatch(args) -> None:
    cfg = _config(args)
    out: Path = args.out
    mode = cfg.prompt.mode
    if args.verb == "params":
        for row in harness.params_table(cfg):
            print(f"{row['scale']:>6}: prompts={row['prompt_params']:,} trainable={row['trainable']:,} "
                  f"frozen={row['frozen']:,} ratio={row['ratio']:.5f}")
        return
    out.mkdir(parents=True, exist_ok=True)
    if args.verb == "run":
        print(harness.run_pipeline(cfg, out, mode))
    elif args.verb == "pretrain":
        harness.write_manifest(cfg, out, ["pretrain"], None)
        print(harness.run_pretrain(cfg, out))
    elif args.verb == "train":
        pre = out / "pretrain" / "backbone.ckpt"
        if not pre.exists():
            raise DependencyError(f"{pre} missing; run 'pretrain' first")
        harness.write_manifest(cfg, out, ["train"], mode)
        harness.run_train(cfg, out / mode, mode, pretrained=pre)
        print(out / mode / "model.ckpt")
    elif args.verb == "eval":
        print(harness.run_eval(cfg, out / mode, mode))
    elif args.verb == "sweep-eta":
        print(harness.sweep_missing_rate(cfg, out, mode=mode))
    elif args.verb == "sweep-layers":
        print(harness.sweep_prompt_layers(cfg, out, mode=mode))
    elif args.verb == "sweep-length":
        print(harness.sweep_prompt_length(cfg, out, mode=mode))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except (ConfigError, RangeError, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0
