"""Command-line entry point: ``edgecrl <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Output directory precedence: ``--out`` > ``output_dir`` in the config >
``$EDGECRL_OUT_DIR`` > ``./runs``. ``--seed`` overrides the config file's seed.

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import EdgeCRLError
from .harness import (ExperimentConfig, compare_tsv, derive_seed, eval_traces, load_checkpoint, load_config,
                      run_compare, run_evaluation, run_training, train_traces, write_report)
from .traces import GeneratorParams, generate_trace, load_trace, save_trace, validate_trace

ENV_OUT = "EDGECRL_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config file")
    common.add_argument("--out", type=Path, help="output directory")

    p = _Parser(prog="edgecrl", description="Constrained-RL configuration adaptation experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate-trace", parents=[common], help="write synthetic segment traces")
    g.add_argument("--split", choices=("train", "eval"), default="eval")
    g.add_argument("-n", type=int, default=None, help="number of traces (default: config count)")

    v = sub.add_parser("validate-trace", parents=[common], help="check trace files against invariants")
    v.add_argument("paths", nargs="+", type=Path)

    t = sub.add_parser("train", parents=[common], help="train the adapter")
    t.add_argument("--steps", type=int, default=None)

    e = sub.add_parser("evaluate", parents=[common], help="evaluate one policy")
    e.add_argument("--policy", default="crl", help="crl, optimal, periodic_profiling, fixed[:i], untrained")
    e.add_argument("--checkpoint", type=Path, default=None)
    e.add_argument("--target", type=float, default=None)
    e.add_argument("--bandwidth", type=float, default=None)

    c = sub.add_parser("compare", parents=[common], help="policy x bandwidth x target sweep")
    c.add_argument("--policies", nargs="+", default=None)
    c.add_argument("--bandwidths", nargs="+", type=float, default=None)
    c.add_argument("--targets", nargs="+", type=float, default=None)
    c.add_argument("--checkpoint", type=Path, default=None)
    return p


def resolve_out(flag: Path | None, cfg: ExperimentConfig | None) -> Path:
    if flag is not None:
        return flag
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(ENV_OUT, "runs"))


def _checkpoint(args, out: Path, needed: bool):
    path = args.checkpoint or out / "checkpoint.json"
    if path.exists():
        return load_checkpoint(path)
    if needed:
        raise EdgeCRLError(f"no checkpoint at {path}; run 'train' first or pass --checkpoint")
    return None


def _cmd_generate(args, cfg: ExperimentConfig, out: Path) -> int:
    if "generator" not in cfg.traces:
        raise EdgeCRLError("config has no trace generator section")
    params = GeneratorParams.from_dict(cfg.traces["generator"])
    n = args.n if args.n is not None else int(cfg.traces.get(f"n_{args.split}", 1))
    base = cfg.traces.get("seed", cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(n):
        trace = generate_trace(params, derive_seed(base, f"trace/{args.split}/{k}"), cfg.space)
        save_trace(trace, out / f"{args.split}_{k:04d}.json")
    print(f"wrote {n} traces to {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    bad = 0
    for path in args.paths:
        try:
            trace = load_trace(path, validate=False)
        except EdgeCRLError as exc:
            print(f"{path}: {exc}")
            bad += 1
            continue
        problems = validate_trace(trace)
        for v in problems:
            print(f"{path}: {v}")
        if problems:
            bad += 1
        else:
            print(f"{path}: ok")
    return EXIT_RUNTIME if bad else EXIT_OK


def _cmd_train(args, cfg, out: Path) -> int:
    res = run_training(cfg, out, args.steps, progress=True)
    last = res.diagnostics[-1] if res.diagnostics else None
    if last:
        print(f"step {last['step']} reward {last['reward_mean']:.3f} failure {last['failure_rate']:.3f}")
    print(f"checkpoint: {res.checkpoint_path}")
    return EXIT_OK


def _cmd_evaluate(args, cfg, out: Path) -> int:
    ckpt = _checkpoint(args, out, needed=args.policy == "crl")
    rep = run_evaluation(cfg, args.policy, ckpt, target=args.target, bandwidth=args.bandwidth)
    name = args.policy.replace(":", "_")
    seg, summ = write_report(rep, out, f"eval_{name}")
    s = rep.summary
    print(f"{args.policy}: failure {s['failure_rate']:.4f} cost {s['mean_cost']:.4f} drop {s['drop_rate']:.4f}")
    print(f"report: {seg} {summ}")
    return EXIT_OK


def _cmd_compare(args, cfg, out: Path) -> int:
    policies = args.policies or cfg.compare["policies"]
    ckpt = _checkpoint(args, out, needed="crl" in policies)
    rows = run_compare(cfg, ckpt, policies, args.bandwidths, args.targets)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.tsv"
    text = compare_tsv(rows)
    path.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage() + "edgecrl: error: a subcommand is required")
        if args.command != "validate-trace" and args.config is None:
            raise _UsageError(parser.format_usage() + f"edgecrl {args.command}: error: --config is required")
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "validate-trace":
            return _cmd_validate(args)
        cfg = load_config(args.config, args.seed)
        out = resolve_out(args.out, cfg)
        handler = {"generate-trace": _cmd_generate, "train": _cmd_train,
                   "evaluate": _cmd_evaluate, "compare": _cmd_compare}[args.command]
        return handler(args, cfg, out)
    except (EdgeCRLError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"edgecrl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
