"""Command-line entry points.

    fedsplit run --group same --mode coop --runs 10 --epochs 200 --seed 0 \
        --out results/same [--transport network --bb host:port] [--config file]
    fedsplit compare results/same results/similar ...
    fedsplit blackboard --bind 127.0.0.1:7700 --agents 2 [--audit bb.log]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import blackboard as bb
from .config import ConfigError, _parse_addr, load_experiment
from .experiments import (
    ExperimentSpec,
    Group,
    Mode,
    TransportKind,
    compare_report,
    load_mean_csv,
    run_experiment,
)
from .federation import FederationError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsplit",
        description="cooperative DQN training with an encrypted shared-layer exchange")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment group")
    run_p.add_argument("--group", choices=[g.value for g in Group])
    run_p.add_argument("--mode", choices=[m.value for m in Mode])
    run_p.add_argument("--runs", type=int)
    run_p.add_argument("--epochs", type=int)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--transport", choices=[t.value for t in TransportKind])
    run_p.add_argument("--bb", metavar="HOST:PORT", help="blackboard address (network mode)")
    run_p.add_argument("--config", help="experiment config file (flags override it)")

    cmp_p = sub.add_parser("compare", help="windowed-mean table across result dirs")
    cmp_p.add_argument("dirs", nargs="+", help="directories containing mean.csv")
    cmp_p.add_argument("--agent", default="A")

    bb_p = sub.add_parser("blackboard", help="run the forwarder service")
    bb_p.add_argument("--bind", required=True, metavar="HOST:PORT")
    bb_p.add_argument("--agents", required=True, type=int)
    bb_p.add_argument("--audit", help="append header audit lines to this file")
    return parser


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    if args.config:
        spec = load_experiment(args.config)
    else:
        if not args.group:
            raise ConfigError("either --config or --group is required")
        spec = ExperimentSpec(group=Group(args.group), mode=Mode(args.mode or "coop"))
    overrides = {}
    if args.group:
        overrides["group"] = Group(args.group)
    if args.mode:
        overrides["mode"] = Mode(args.mode)
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.transport:
        overrides["transport"] = TransportKind(args.transport)
    if args.bb:
        overrides["blackboard_addr"] = _parse_addr(args.bb)
    return replace(spec, **overrides) if overrides else spec


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    curves = run_experiment(spec, out_dir=args.out)
    print(f"wrote raw.csv, mean.csv, curves.svg to {args.out}")
    for i, agent in enumerate(curves.agents):
        final = curves.mean[i, -1]
        peak = curves.mean[i].max()
        print(f"agent {agent}: final mean return {final:.1f}, peak {peak:.1f}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    labeled = []
    for d in args.dirs:
        path = Path(d) / "mean.csv"
        if not path.exists():
            print(f"error: {path} not found", file=sys.stderr)
            return 2
        labeled.append((Path(d).name, load_mean_csv(path)))
    print(compare_report(labeled, agent=args.agent).format())
    return 0


def _cmd_blackboard(args: argparse.Namespace) -> int:
    bb.serve(_parse_addr(args.bind), args.agents, args.audit)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_blackboard(args)
    except (ConfigError, FederationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
