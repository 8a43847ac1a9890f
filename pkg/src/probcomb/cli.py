"""Command-line entry point.

Exit codes: 0 on success, 1 on a validation error (bad config, missing or
mismatched input files), 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig
from .errors import ConfigError, ProbCombError

COMMANDS = ("simulate", "train", "vbem", "evaluate", "selfcheck")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are validation errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="probcomb", description="Combinator inference on the bouncing-ball HMM.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "write the dataset CSV"),
        ("train", "wake-sleep SMC training; writes the JSONL log and params JSON"),
        ("vbem", "fit the VBEM baseline; writes params JSON"),
        ("evaluate", "metrics report for every fitted method"),
        ("selfcheck", "oracle, proper-weighting and finite-difference suites"),
    ]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        s.add_argument("--out", help="override the output directory")
        s.add_argument("--timing", action="store_true", help="record wall-clock times in the outputs")
        if name == "selfcheck":
            s.add_argument("--quick", action="store_true", help="fewer Monte Carlo draws")
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output"] = type(cfg.output)(directory=args.out)
    return cfg.replace(**changes) if changes else cfg


def _run(args) -> int:
    from .hmm import experiment as ex

    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    cfg = load_config(args)
    if args.command == "selfcheck":
        from .selfcheck import run_selfcheck

        ok = run_selfcheck(seed=cfg.seed, quick=args.quick, out=sys.stdout)
        return 0 if ok else 2
    art = ex.Artifacts(cfg)
    if args.command == "simulate":
        ds = ex.simulate_stage(cfg, art)
        print(f"wrote {art.path('dataset.csv')} ({len(ds)} sequences)")
    elif args.command == "train":
        def progress(rec):
            print(f"epoch {rec['epoch']}: mean log evidence {rec['mean_log_evidence']:.3f}", flush=True)

        ex.train_stage(cfg, art, workers=args.workers, timing=args.timing, progress=progress)
        print(f"wrote {art.path('smc_params.json')}")
    elif args.command == "vbem":
        post = ex.vbem_stage(cfg, art, timing=args.timing)
        print(f"wrote {art.path('vbem_params.json')} ({len(post.elbo_trace)} iterations)")
    elif args.command == "evaluate":
        rep = ex.evaluate_stage(cfg, art)
        print(json.dumps({"transition_error": rep["transition_error"], "state_accuracy": rep["state_accuracy"]},
                         sort_keys=True))
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    from .hmm.experiment import ArtifactError

    try:
        return _run(args)
    except (ConfigError, ArtifactError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ProbCombError, ArithmeticError, ValueError) as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
