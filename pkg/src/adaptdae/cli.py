"""Command line entry points: run experiments, validate configs, replay traces."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import POLICIES, ConfigError, load_config, validate_experiment
from .harness import replay_summary, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptdae")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more experiments")
    run.add_argument("--config", required=True, help="path to a key=value config file")
    run.add_argument("--seed", type=int, nargs="+", help="override the config seed(s)")
    run.add_argument("--policy", choices=POLICIES, nargs="+", help="override the policy (one run per value)")
    run.add_argument("--out", help="trace path; gets a _policy_sSEED suffix for multi-run invocations")
    run.add_argument("--last", type=int, help="summary window override")

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", required=True)

    rep = sub.add_parser("replay", help="recompute summary statistics from a trace")
    rep.add_argument("trace")
    rep.add_argument("--last", type=int, default=250)
    return parser


def _fmt_summary(tag: str, summary) -> str:
    def pair(mean, std):
        if mean is None:
            return "n/a"
        return f"{mean:.6f}±{std:.6f}"

    return (
        f"{tag} last={summary.window} "
        f"e_lcl={pair(summary.e_lcl_mean, summary.e_lcl_std)} "
        f"e_glb={pair(summary.e_glb_mean, summary.e_glb_std)}"
    )


def _suffixed(path: str, policy: str, seed: int) -> str:
    stem, dot, ext = path.rpartition(".")
    if not dot:
        return f"{path}_{policy}_s{seed}"
    return f"{stem}_{policy}_s{seed}.{ext}"


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.last is not None:
        cfg = replace(cfg, summary_last=args.last)
    seeds = args.seed if args.seed else [cfg.seed]
    policies = args.policy if args.policy else [cfg.policy]
    base_out = args.out if args.out is not None else cfg.out
    multi = len(seeds) * len(policies) > 1
    for policy in policies:
        for seed in seeds:
            run_cfg = replace(cfg, policy=policy, seed=seed)
            out = _suffixed(base_out, policy, seed) if multi and base_out else base_out
            result = run_experiment(run_cfg, out_path=out)
            where = f" -> {result.trace_path}" if result.trace_path else ""
            print(_fmt_summary(f"policy={policy} seed={seed}", result.summary) + where)
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate_experiment(cfg)
    if problems:
        for p in problems:
            print(f"{args.config}: {p}", file=sys.stderr)
        return 2
    print(f"{args.config}: ok")
    return 0


def _cmd_replay(args) -> int:
    summary = replay_summary(args.trace, args.last)
    print(_fmt_summary(args.trace, summary))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_replay(args)
    except ConfigError as err:
        print(f"{getattr(args, 'config', '?')}: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
