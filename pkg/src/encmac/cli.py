"""encmac command line: table, search, simulate, finetune, eval, sweep.

Exit codes: 0 success, 2 usage/config error, 3 target unreachable,
4 training diverged.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from . import __version__
from .api import (
    cmd_eval,
    cmd_finetune,
    cmd_nonuniform,
    cmd_search,
    cmd_simulate,
    cmd_sweep,
    cmd_sweep_accuracy,
    cmd_table,
)
from .config import ExperimentConfig, apply_overrides, load_config
from .errors import ContractError, TargetUnreachableError, TrainingDivergedError
from .workspace import Workspace, dumps_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNREACHABLE = 3
EXIT_DIVERGED = 4


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from e


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its values")
    common.add_argument("--seed", type=int, help="Master seed for every random stream")
    common.add_argument("--jobs", type=int, help="Worker processes for circuit sampling")
    common.add_argument("--out", help="Existing output directory")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--width", type=int, help="Operand width W in bits")

    search_flags = argparse.ArgumentParser(add_help=False)
    search_flags.add_argument("--samples", type=int, help="Max circuits sampled per output width")
    search_flags.add_argument("--min-width", type=int)
    search_flags.add_argument("--max-width", type=int)
    search_flags.add_argument("--target-rmse", type=float, help="Absolute target RMSE")
    search_flags.add_argument("--target-fraction", type=float, help="Target as a fraction of the table RMS")
    search_flags.add_argument("--window", type=int, help="Stability window in samples")
    search_flags.add_argument("--epsilon", type=float, help="Relative improvement that counts as progress")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--dataset", help="CSV dataset (feature...,label)")
    train_flags.add_argument("--network", help="Network checkpoint JSON")
    train_flags.add_argument("--epochs", type=int)
    train_flags.add_argument("--lr", type=float, help="Position-weight learning rate")

    parser = argparse.ArgumentParser(
        prog="encmac", description="Encoding-based approximate multiplier exploration"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table", parents=[common], help="Write the product truth table CSV")
    p.add_argument("--kind", choices=["uniform-signed", "nonuniform-codebook"])
    p.add_argument("--codebook", type=_floats, help="Comma-separated codebook levels")

    p = sub.add_parser("search", parents=[common, search_flags], help="Search an encoding")
    p.add_argument("--kind", choices=["uniform-signed", "nonuniform-codebook"])
    p.add_argument("--codebook", type=_floats, help="Comma-separated codebook levels")
    p.add_argument("--output-width", type=int, help="Sample only this output width (no binary search)")

    p = sub.add_parser("simulate", parents=[common], help="Simulate the encoded array and the baseline")
    p.add_argument("--encoding", required=True, help="encoding.json from search")
    p.add_argument("--array-size", type=int, help="Array size N")
    p.add_argument("--matrices", type=int, help="Input matrices m streamed back to back")
    p.add_argument("--clock-period", type=float)
    p.add_argument("--functional-limit", type=int, help="Largest N with functional outputs")

    p = sub.add_parser("finetune", parents=[common, train_flags], help="Fine-tune position weights")
    p.add_argument("--encoding", required=True)

    p = sub.add_parser("eval", parents=[common, train_flags], help="Evaluate the toy network")
    p.add_argument("--encoding", help="Evaluate with this encoding as well as exactly")

    p = sub.add_parser("sweep", parents=[common, search_flags, train_flags], help="RMSE/accuracy sweeps")
    p.add_argument("--widths", type=_ints, help="Comma-separated output widths")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--accuracy", action="store_true", help="Accuracy vs output width")
    mode.add_argument("--nonuniform", action="store_true", help="Codebook table width search")
    p.add_argument("--codebook-width", type=int, help="Bits of the learned codebook")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "seed": "seed",
        "jobs": "jobs",
        "out": "out",
        "log_level": "log_level",
        "target_fraction": "target_fraction",
        "width": "quant.width",
        "kind": "quant.kind",
        "codebook": "quant.codebook",
        "samples": "search.max_samples",
        "min_width": "search.min_width",
        "max_width": "search.max_width",
        "target_rmse": "search.target_rmse",
        "window": "search.window",
        "epsilon": "search.epsilon",
        "output_width": "search.output_width",
        "widths": "search.sweep_widths",
        "array_size": "array.size",
        "matrices": "array.matrices",
        "clock_period": "array.clock_period",
        "functional_limit": "array.functional_limit",
        "dataset": "train.dataset",
        "network": "train.network",
        "epochs": "train.epochs",
        "lr": "train.lr",
        "codebook_width": "train.codebook_width",
    }
    return {key: getattr(args, name) for name, key in flags.items() if hasattr(args, name)}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, _overrides(args))
    if getattr(args, "codebook", None) is not None and getattr(args, "kind", None) is None:
        cfg.quant.kind = "nonuniform-codebook"
        if args.width is None:
            cfg.quant.width = max(len(args.codebook).bit_length() - 1, 1)
    return cfg


def run(args: argparse.Namespace, cfg: ExperimentConfig) -> Dict[str, Any]:
    workspace = Workspace(cfg.out)
    if args.command == "table":
        return cmd_table(workspace, cfg.quant)
    if args.command == "search":
        return cmd_search(workspace, cfg)
    if args.command == "simulate":
        return cmd_simulate(workspace, cfg, args.encoding)
    if args.command == "finetune":
        return cmd_finetune(workspace, cfg, args.encoding)
    if args.command == "eval":
        return cmd_eval(workspace, cfg, args.encoding)
    if args.accuracy:
        return cmd_sweep_accuracy(workspace, cfg)
    if args.nonuniform:
        return cmd_nonuniform(workspace, cfg)
    return cmd_sweep(workspace, cfg)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ContractError, ValueError, FileNotFoundError) as e:
        print(f"encmac: config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, cfg.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        summary = run(args, cfg)
    except TargetUnreachableError as e:
        logger.error(f"{e} (best-effort encoding written)")
        return EXIT_UNREACHABLE
    except TrainingDivergedError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except FileNotFoundError as e:
        logger.error(f"{e.strerror}: {e.filename}")
        return EXIT_USAGE
    except (ContractError, ValueError) as e:
        logger.error(str(e))
        return EXIT_USAGE

    print(dumps_json(summary), end="")
    return EXIT_OK
