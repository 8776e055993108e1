"""Command-line interface.

Subcommands: ``train``, ``eval``, ``synth``, ``gradcheck``.  Exit code 0
on success, 1 for anything the user can fix (bad flags, bad config, bad
files), 2 for unexpected runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import StnhclError
from .synth import PALETTES, make_dataset


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit with the validation code (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._fail(message))

    def _fail(self, message) -> int:
        print(f"error: {message}", file=sys.stderr)
        return 1


def _build_parser() -> _Parser:
    parser = _Parser(prog="stnhcl", description="Patch-hypergraph contrastive stain transfer (desk scale).")
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="print every configuration default as 'key = value' and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", type=Path, help="key = value config file")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    p_train.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    p_eval = sub.add_parser("eval", help="score a checkpoint on held-out data")
    p_eval.add_argument("--config", type=Path, help="key = value config file")
    p_eval.add_argument("--checkpoint", type=Path, required=True, help="checkpoint to score")
    p_eval.add_argument("--data", type=Path, help="override the config eval_dir")
    p_eval.add_argument("--out", type=Path, help="where to write eval_report.jsonl (default: stdout only)")

    p_synth = sub.add_parser("synth", help="render a synthetic stained dataset")
    p_synth.add_argument("--out", type=Path, required=True, help="dataset directory")
    p_synth.add_argument("--count", type=int, default=16, help="samples per domain")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=64, help="square image extent")
    p_synth.add_argument(
        "--domains",
        default=",".join(sorted(PALETTES)),
        help="comma-separated stain domains (default: all)",
    )

    p_check = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p_check.add_argument("--eps", type=float, default=1e-4)
    p_check.add_argument("--tol", type=float, default=1e-4)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--trials", type=int, default=3, help="random trials per primitive")
    return parser


def _load(config_path, seed=None) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def _cmd_train(args) -> int:
    cfg = _load(args.config, args.seed)
    if args.print_config:
        print(cfg.to_text(), end="")
        return 0
    from .train import train

    result = train(cfg, args.out)
    print(f"trained {result.iterations} iterations in {result.wall_seconds:.1f}s")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args.config)
    from .evaluate import evaluate

    report = evaluate(args.checkpoint, cfg, eval_dir=args.data)
    print(report.summary_text())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        out_path = args.out / "eval_report.jsonl"
        out_path.write_text(report.to_jsonl(), encoding="ascii")
        print(f"report: {out_path}")
    return 0


def _cmd_synth(args) -> int:
    domains = [d.strip() for d in args.domains.split(",") if d.strip()]
    manifest = make_dataset(args.count, domains, args.seed, args.out, size=args.size)
    print(f"manifest: {manifest}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite, suite_passed

    results = run_suite(eps=args.eps, tol=args.tol, seed=args.seed, trials_per_op=args.trials)
    for r in results:
        print(r.line())
    ok = suite_passed(results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.print_config and args.command is None:
            print(RunConfig().to_text(), end="")
            return 0
        if args.command is None:
            parser.print_help()
            return 1
        handler = {
            "train": _cmd_train,
            "eval": _cmd_eval,
            "synth": _cmd_synth,
            "gradcheck": _cmd_gradcheck,
        }[args.command]
        return handler(args)
    except (StnhclError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive
        print(f"unexpected failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
