"""Command-line entry point: run experiments, build reports, roll policies."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from symchain.config import ConfigError, ExperimentConfig, load_config
from symchain.runner import eval_rollout, report, resolve_out_dir, run


def _split(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symchain",
        description="Two-echelon supply-chain experiments: train, evaluate, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train and evaluate the configured experiment matrix")
    run_p.add_argument("--config", help="experiment config file (INI)")
    run_p.add_argument("--seed", help="comma list of training seeds, e.g. 1,2,3")
    run_p.add_argument("--out", help="output directory (overrides config and environment)")
    run_p.add_argument("--demand", help="comma list from {high,low}")
    run_p.add_argument("--arch", help="comma list from {homo,hetero}")
    run_p.add_argument("--algo", help="comma list from {sac,ppo}")
    run_p.add_argument("--reward", help="comma list from {baseline,pearso,peafso,colla}")
    run_p.add_argument("--iters", type=int, help="iteration cap per run")
    run_p.add_argument("--jobs", type=int, help="parallel jobs (each job is single-threaded)")
    run_p.add_argument("--strict-actions", action="store_true", default=None,
                       help="raise on out-of-range actions instead of clamping")
    run_p.add_argument("--hidden", help="comma list of hidden layer widths, e.g. 64,64")
    run_p.add_argument("--reward-scale", type=float, help="internal reward scale for the learners")

    report_p = sub.add_parser("report", help="aggregate completed runs into tables and figures")
    report_p.add_argument("--out", required=True, help="output directory of a previous run")

    eval_p = sub.add_parser("eval", help="roll a saved policy and write its trace")
    eval_p.add_argument("--checkpoint", required=True, help="checkpoint.json from a run")
    eval_p.add_argument("--steps", type=int, default=500, help="rollout length (default 500)")
    eval_p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    eval_p.add_argument("--demand", choices=["high", "low"], help="override the trained demand regime")
    eval_p.add_argument("--out", required=True, help="directory for the trace and figure")
    eval_p.add_argument("--stochastic", action="store_true", help="sample actions instead of using the mean")
    return parser


def _config_from_args(args) -> tuple[ExperimentConfig, str | None]:
    """Effective config plus the verbatim file text when nothing overrides it."""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = load_config(args.config)
    else:
        text = None
        config = ExperimentConfig()

    overrides: dict = {}
    if args.seed:
        overrides["seeds"] = tuple(int(s) for s in _split(args.seed))
    if args.demand:
        overrides["demands"] = _split(args.demand)
    if args.arch:
        overrides["architectures"] = _split(args.arch)
    if args.algo:
        overrides["algorithms"] = _split(args.algo)
    if args.reward:
        overrides["reward_modes"] = _split(args.reward)
    if args.iters is not None:
        overrides["iteration_cap"] = args.iters
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.strict_actions is not None:
        overrides["strict_actions"] = args.strict_actions
    if args.hidden:
        overrides["hidden"] = tuple(int(h) for h in _split(args.hidden))
    if args.reward_scale is not None:
        overrides["reward_scale"] = args.reward_scale
    if overrides:
        config = replace(config, **overrides)
        text = None  # snapshot must reflect the effective config
    return config, text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config, text = _config_from_args(args)
            out_root = resolve_out_dir(config, args.out)
            artifacts = run(config, out_dir=args.out, config_text=text)
            ok = sum(1 for a in artifacts if a.status == "ok")
            print(f"completed {ok}/{len(artifacts)} runs; report under {out_root / 'report'}")
            for a in artifacts:
                if a.status != "ok":
                    print(f"  failed: {a.cell} seed {a.seed}: {a.error}", file=sys.stderr)
            return 0
        if args.command == "report":
            paths = report(args.out)
            print(f"report written to {paths.report_dir}")
            return 0
        if args.command == "eval":
            result = eval_rollout(
                args.checkpoint, args.steps, args.seed, args.out,
                demand=args.demand, deterministic=not args.stochastic,
            )
            print(f"trace: {result['trace_csv']}")
            print(f"figure: {result['figure']}")
            print(f"mean total reward: {result['mean_total']:.2f}")
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
