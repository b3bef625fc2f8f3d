"""Command line interface.

Subcommands:

* ``build``     - construct a variant and print its parameter/FLOP report
* ``gradcheck`` - verify sampled analytic gradients against finite differences
* ``train``     - run toy training from a config file
* ``attnmap``   - export per-head attention maps for an image as PGM files

Exit codes: 0 success, 1 gradcheck mismatch, 2 usage or configuration error,
3 non-finite values during gradient verification.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import tensor as T
from .analysis import cost_report, export_attention_maps
from .backbone import VARIANTS, reduced_variant
from .checkpoint import load_checkpoint
from .config import (
    apply_env_overrides,
    ffn_from_string,
    pattern_from_string,
    read_config,
)
from .data import read_image
from .errors import ConfigError, ShapeError
from .gradcheck import run_gradcheck
from .train import run_training

_PATTERNS = ("bifovea", "parallel", "cascade")
_FFNS = ("bffn", "cffn", "ffn")


def _add_build(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("build", help="construct a variant and print its cost report")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="tiny")
    p.add_argument("--input", type=int, default=224, help="square input size (default 224)")
    p.add_argument("--pattern", choices=_PATTERNS, default="bifovea")
    p.add_argument("--ffn", choices=_FFNS, default="bffn")
    p.add_argument(
        "--report", choices=("params", "flops", "table"), default="table",
        help="which columns to print",
    )
    p.add_argument("--csv", metavar="PATH", help="also write the per-module table as CSV")


def _add_gradcheck(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gradcheck", help="verify gradients on a reduced model")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="tiny")
    p.add_argument("--input", type=int, default=32)
    p.add_argument("--samples", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-3, help="finite-difference step h")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--width-divisor", type=int, default=4)
    p.add_argument("--pattern", choices=_PATTERNS, default="bifovea")
    p.add_argument("--ffn", choices=_FFNS, default="bffn")
    # deliberately breaks one adjoint to prove the checker catches it
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)


def _add_train(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("train", help="train on the toy dataset per a config file")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", default="train_out", metavar="DIR")


def _add_attnmap(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("attnmap", help="export per-head attention maps as PGM images")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--image", required=True, metavar="PATH", help="a .pgm or .ppm file")
    p.add_argument("--stage", type=int, default=3, help="stage number, 1-4")
    p.add_argument("--block", type=int, default=0, help="block index within the stage, from 0")
    p.add_argument(
        "--fovea", choices=("shallow", "deep"), default="shallow",
        help="which attention pathway to visualize",
    )
    p.add_argument("--out", default="attn_maps", metavar="DIR")


def _cmd_build(args) -> int:
    report = cost_report(
        VARIANTS[args.variant],
        input_size=args.input,
        pattern=pattern_from_string(args.pattern),
        ffn_kind=ffn_from_string(args.ffn),
    )
    print(report.render(detail=args.report))
    if args.csv:
        report.write_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.samples < 1:
        raise ConfigError(f"--samples must be >= 1, got {args.samples}")
    spec = reduced_variant(
        VARIANTS[args.variant], width_divisor=args.width_divisor, num_classes=2
    )
    if args.corrupt:
        T.set_adjoint_corruption("gelu")
    try:
        result = run_gradcheck(
            spec,
            seed=args.seed,
            input_size=args.input,
            samples=args.samples,
            h=args.step,
            tolerance=args.tolerance,
            pattern=pattern_from_string(args.pattern),
            ffn_kind=ffn_from_string(args.ffn),
        )
    finally:
        T.set_adjoint_corruption(None)

    for s in result.samples:
        print(
            f"{s.name}[{','.join(map(str, s.index))}] analytic={s.analytic:+.6e} "
            f"numeric={s.numeric:+.6e} rel_err={s.rel_error:.3e}"
        )
    print(
        f"max relative error {result.max_rel_error:.3e} over {len(result.samples)} "
        f"samples (tolerance {result.tolerance:.1e})"
    )
    if not result.finite:
        print("FAIL: non-finite gradient encountered", file=sys.stderr)
        return 3
    if not result.passed:
        print("FAIL: analytic gradients disagree with finite differences", file=sys.stderr)
        return 1
    print("PASS")
    return 0


def _cmd_train(args) -> int:
    config = apply_env_overrides(read_config(args.config))
    result = run_training(config, args.out)
    print(
        f"finished {result.steps} steps: final loss {result.final_loss:.4f}, "
        f"training accuracy {result.final_accuracy:.2%}"
    )
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_attnmap(args) -> int:
    graph = load_checkpoint(args.checkpoint)
    image = read_image(args.image)
    fovea = "sfa" if args.fovea == "shallow" else "dfa"
    paths = export_attention_maps(
        graph, image, stage=args.stage, block=args.block, out_dir=args.out, fovea=fovea
    )
    for path in paths:
        print(path)
    return 0


_COMMANDS = {
    "build": _cmd_build,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "attnmap": _cmd_attnmap,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="evit",
        description="bi-fovea vision backbone: cost reports, gradient checks, "
        "toy training and attention visualization",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_build(sub)
    _add_gradcheck(sub)
    _add_train(sub)
    _add_attnmap(sub)
    args = parser.parse_args(argv)

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
