"""Command-line interface: ``amattack {attack,evaluate,defend,demo-fig1}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiment import cmd_attack, cmd_defend, cmd_demo_fig1, cmd_evaluate, fig1_config, load_config

KINDS = ("cca", "mean", "linear")


def _fractions(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment manifest")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--trials", type=int)
    common.add_argument("--attack", choices=KINDS)
    common.add_argument("--victim", choices=KINDS + ("mice",), action="append",
                        help="victim remediation (repeatable)")
    common.add_argument("--lambda-upper", type=float)
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="amattack", description="Adversarial missingness attacks on GLM fitting.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("attack", parents=[common], help="train a missingness mechanism")
    p = sub.add_parser("evaluate", parents=[common], help="sample masks and fit the victims")
    p.add_argument("--mechanism", help="mechanism.json (default: <out-dir>/mechanism.json)")
    p = sub.add_parser("defend", parents=[common], help="KNN-Shapley discard sweep")
    p.add_argument("--mechanism")
    p.add_argument("--fractions", type=_fractions, help="e.g. 0,0.1,0.2")
    sub.add_parser("demo-fig1", parents=[common], help="attack and evaluate the pinned 2-d synthetic problem")
    return parser


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "trials": args.trials,
        "attack": args.attack,
        "victims": tuple(args.victim) if args.victim else None,
        "lambda_upper": args.lambda_upper,
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "workers": args.workers,
    }


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "demo-fig1" and args.config is None:
            config = fig1_config(**_overrides(args))
        else:
            config = load_config(args.config, **_overrides(args))
        out = Path(config.out_dir)
        if args.command == "attack":
            result = cmd_attack(config)
        elif args.command == "demo-fig1":
            result = cmd_demo_fig1(config)
        else:
            mech = args.mechanism or out / "mechanism.json"
            if args.command == "evaluate":
                result = cmd_evaluate(config, mech)
            else:
                cmd_defend(config, mech, args.fractions)
                result = {"sweep": str(out / "sweep.csv")}
    except (OSError, ValueError, RuntimeError, NotImplementedError, KeyError) as exc:
        print(f"amattack {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, default=str))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
