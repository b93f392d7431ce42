"""``fedvae`` command line.

    fedvae prepare     [--config PATH] [--seed N] [--out DIR]
    fedvae train       [...] [--clients N] [--resume]
    fedvae generate    [...]
    fedvae anonymize   [...] --method {kanon,perturb,mixzone}
    fedvae evaluate    [...] [--method NAME ...]
    fedvae scalability [...] [--clients 2,5,10]

Worker threads for client training can be overridden with FEDVAE_THREADS.
Failures exit nonzero (2 for config errors, 1 otherwise) with a message
tagged with the stage name.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, experiment
from .config import PRESETS, load_config
from .errors import ConfigError, FedVaeError


def _int_list(text):
    try:
        values = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("client counts must be positive integers")
    return values


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--preset", choices=sorted(PRESETS), help="base preset (default: desk)")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--out", metavar="DIR", help="output directory override")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fedvae", description="Federated trajectory VAE experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build train/val/test segment files")
    t = sub.add_parser("train", parents=[common], help="federated training")
    t.add_argument("--clients", type=int, help="number of clients")
    t.add_argument("--resume", action="store_true", help="continue from model/federation.fvae")
    sub.add_parser("generate", parents=[common], help="sample a release from the trained model")
    a = sub.add_parser("anonymize", parents=[common], help="run a baseline anonymizer")
    a.add_argument("--method", required=True, help="kanon, perturb or mixzone")
    e = sub.add_parser("evaluate", parents=[common], help="score released datasets")
    e.add_argument("--method", action="append", help="restrict to a method (repeatable)")
    s = sub.add_parser("scalability", parents=[common], help="fitted rounds per client count")
    s.add_argument("--clients", type=_int_list, help="comma-separated client counts")
    return p


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, args.preset, overrides)


def run(args):
    cfg = _config(args)
    cmd = args.command
    if cmd == "prepare":
        splits = experiment.prepare(cfg)
        return ", ".join(f"{k}={len(v)}" for k, v in splits.items()) + " segments"
    if cmd == "train":
        _, reports = experiment.train(cfg, resume=args.resume, clients=args.clients)
        if not reports:
            return "no rounds run"
        return f"{len(reports)} rounds, final global loss {reports[-1].global_loss:.6g}"
    if cmd == "generate":
        return f"{len(experiment.generate(cfg))} segments generated"
    if cmd == "anonymize":
        segments, _ = experiment.anonymize(cfg, args.method)
        return f"{len(segments)} segments released by {args.method}"
    if cmd == "evaluate":
        experiment.evaluate(cfg, args.method)
        return "\n" + (Path(cfg.out) / "eval" / "table.txt").read_text()
    if cmd == "scalability":
        rows = experiment.scalability(cfg, args.clients)
        return "; ".join(f"{r['clients']} clients: {r['fitted_epochs']} rounds"
                         + ("" if r["converged"] else " (cap)") for r in rows)
    raise AssertionError(cmd)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        message = run(args)
    except ConfigError as exc:
        print(f"fedvae {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (FedVaeError, OSError, ValueError) as exc:
        print(f"fedvae {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"fedvae {args.command}: {message}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
