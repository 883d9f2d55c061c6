"""
Command line interface: training, evaluation, the alpha sweep, Q-landscapes,
the exact oracle, curve export and perturbation comparisons.
"""

import argparse
import asyncio
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

from pydantic import ValidationError

from .core.divergence import metric
from .core.intersection_env import perturb
from .core.neural_q import CheckpointError
from .tools.dp_oracle import OracleConfigError, feasibility_scan, oracle_frame, solve, solve_strategies
from .tools.evaluation import (
    DEFAULT_ALPHAS, alpha_sweep, certify_fallback, evaluate, export_curves, load_policy,
    perturbation_compare, policy_distribution, qlandscape,
)
from .tools.report_generator import TextReportGenerator
from .tools.trainer import run_training
from .utils.config_io import load_env_config, load_train_config
from .utils.helpers import load_config_from_env, resolve_output_path, sanitize_filename, setup_logging

EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2

CONFIG_ERRORS = (ValidationError, OracleConfigError, CheckpointError, ValueError, FileNotFoundError)


def parse_perturb(text: str) -> Tuple[int, float]:
    """``target=1,factor=1.5`` -> (1, 1.5); a bare number is a factor for target 1"""
    fields = {"target": "1"}
    try:
        if "=" not in text:
            return 1, float(text)
        for part in text.split(","):
            key, value = part.split("=", 1)
            fields[key.strip()] = value.strip()
        if set(fields) != {"target", "factor"}:
            raise ValueError(f"unknown keys {sorted(set(fields) - {'target', 'factor'})}")
        return int(fields["target"]), float(fields["factor"])
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected target=<n>,factor=<x>, got {text!r} ({e})") from None


def _out_dir(args: argparse.Namespace) -> Path:
    return resolve_output_path(args.out or "reports")


def _save(generator: TextReportGenerator, text: str, out: Path, name: str) -> Path:
    path = asyncio.run(generator.save_report(text, out, name))
    print(text)
    print(f"report: {path}")
    return path


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    run_dir = Path(args.run_dir) if args.run_dir else None
    artifacts = run_training(cfg, run_dir)
    for agent_id in sorted(artifacts.checkpoints):
        print(f"agent {agent_id}: {artifacts.final_checkpoint(agent_id)}")
    print(f"episode log: {artifacts.merged_log}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_env_config(args.config)
    if args.perturb is not None:
        target, factor = args.perturb
        cfg = perturb(cfg, target, factor)
    report = evaluate(args.checkpoint, cfg, args.episodes, args.seed or 0)
    generator = TextReportGenerator()
    _save(generator, generator.render_eval(report), _out_dir(args), f"eval_{Path(args.checkpoint).stem}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    sweep_dir = Path(args.out) if args.out else None
    result = alpha_sweep(cfg, args.alphas, args.eval_episodes, sweep_dir)
    generator = TextReportGenerator()
    _save(generator, generator.render_sweep(result), _out_dir(args), "alpha_sweep")
    return 0 if all(row.error is None for row in result.rows) else EXIT_RUNTIME_ERROR


def cmd_qmap(args: argparse.Namespace) -> int:
    cfg = load_env_config(args.config)
    if args.perturb is not None:
        cfg = perturb(cfg, *args.perturb)
    landscape = qlandscape(args.checkpoints, cfg, args.trajectories, args.seed or 0)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{sanitize_filename('qmap_' + Path(args.checkpoints[0]).stem)}.csv"
    landscape.to_frame().to_csv(path, index=False)
    print(f"outcomes: {', '.join(landscape.outcomes)}")
    print(f"speed centroid: {landscape.centroid_speed():.4f} m/s")
    print(f"landscape: {path}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = load_env_config(args.config)
    if args.constraint == "both":
        report = solve_strategies(cfg, args.gamma)
    else:
        report = [solve(cfg, args.gamma, args.constraint)]
    feasibility = feasibility_scan(cfg, args.lattice, args.gamma) if args.scan else None

    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"oracle_{sanitize_filename(Path(args.config).stem)}.csv"
    oracle_frame(report).to_csv(csv_path, index=False)
    generator = TextReportGenerator()
    _save(generator, generator.render_oracle(report, feasibility), out, f"oracle_{Path(args.config).stem}")
    print(f"table: {csv_path}")
    return 0


def cmd_curves(args: argparse.Namespace) -> int:
    files = export_curves(resolve_output_path(args.run_dir), args.window)
    for agent_id, path in sorted(files.items()):
        print(f"agent {agent_id}: {path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_env_config(args.config)
    seed = args.seed or 0
    comparison = perturbation_compare(
        args.optimal, args.fallback, cfg, args.factor, args.target, args.episodes, seed
    )

    train_cfg = load_train_config(args.config)
    optimal = policy_distribution(load_policy(args.optimal), cfg, args.episodes, seed, train_cfg.shaping)
    fallback = policy_distribution(load_policy(args.fallback), cfg, args.episodes, seed, train_cfg.shaping)
    certificate = certify_fallback(
        comparison.optimal_base, comparison.fallback_base,
        metric(fallback.histogram, optimal.histogram), train_cfg.shaping, args.epsilon,
    )
    generator = TextReportGenerator()
    _save(generator, generator.render_comparison(comparison, certificate), _out_dir(args),
          f"compare_{Path(args.fallback).stem}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    env = load_config_from_env()
    parser = argparse.ArgumentParser(
        prog="fallback-strategies",
        description="Train and evaluate optimal and fallback driving policies on the left-turn task.",
    )
    parser.add_argument("--log-level", default=env["log_level"], help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--seed", type=int, default=None, help="Overrides the config seeds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train the optimal agent and its pseudo-agents.")
    p.add_argument("config")
    p.add_argument("--run-dir", default=None, help="Defaults to run.output_dir under the output root.")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Greedy evaluation of a checkpoint.")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--perturb", type=parse_perturb, default=None, metavar="target=1,factor=1.5")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-alpha", help="Train the N=1 pair for each alpha.")
    p.add_argument("config")
    p.add_argument("--alphas", type=float, nargs="+", default=list(DEFAULT_ALPHAS))
    p.add_argument("--eval-episodes", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("qmap", help="Mean greedy Q-value per (step, speed) cell.")
    p.add_argument("checkpoints", nargs="+", help="One or more checkpoints whose rollouts are pooled.")
    p.add_argument("config")
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--perturb", type=parse_perturb, default=None, metavar="target=1,factor=1.5")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_qmap)

    p = sub.add_parser("oracle", help="Exact backward induction for both strategies.")
    p.add_argument("config")
    p.add_argument("--constraint", choices=["both", "none", "cross-after-target-1"], default="both")
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--scan", action="store_true", help="Also run the feasibility scan.")
    p.add_argument("--lattice", type=int, default=5, help="Hold-length step of the feasibility scan.")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("curves", help="Export smoothed per-agent training curves.")
    p.add_argument("run_dir")
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("compare", help="Optimal vs fallback under a collision-radius perturbation.")
    p.add_argument("optimal")
    p.add_argument("fallback")
    p.add_argument("config", help="Full training config ([environment] and [shaping] are used).")
    p.add_argument("--target", type=int, default=1)
    p.add_argument("--factor", type=float, default=1.5)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=1.0, help="Sub-optimality margin on the discounted value.")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = setup_logging(args.log_level)
    try:
        return args.func(args)
    except CONFIG_ERRORS as e:
        logger.error(f"{args.command}: {type(e).__name__}: {e}")
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
