"""
Command-line entry points.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 divergence,
4 failed gradient check.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .checks import run_suite
from .data import SOURCE, TARGET, SplitSpec, generate_synthetic, make_splits, save_samples
from .errors import ConfigError, DivergenceError, EmodaError, IngestionError, SplitError
from .harness import build_spec, dump_spec, load_samples, read_config, run_experiment, run_single, summary_table
from .metrics import evaluate
from .model import load_bundle
from .trainer import MODES, domain_probe_auc

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE, EXIT_CHECK = 0, 1, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _modes(text):
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown mode(s) {bad}; choose from {', '.join(MODES)}")
    return modes


def _spec_from_args(args):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "data", None):
        values["data"] = args.data
    spec = build_spec(values)
    train = spec.train
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
        spec = replace(spec, synth=replace(spec.synth, seed=args.seed))
    spec = replace(spec, train=train)
    if getattr(args, "runs", None) is not None:
        spec = replace(spec, runs=args.runs)
    return spec


def cmd_synth_data(args):
    spec = _spec_from_args(args)
    samples = generate_synthetic(spec.synth)
    manifest = save_samples(samples, args.out)
    with open(os.path.join(args.out, "synth.cfg"), "w", encoding="utf-8") as fh:
        fh.write(dump_spec(spec))
    print(f"wrote {len(samples)} samples to {manifest}")


def _grid(spec, args):
    lcs = args.lambda_conf or [spec.train.lambda_conf]
    lss = args.lambda_soft or [spec.train.lambda_soft]
    return [(lc, ls) for lc in lcs for ls in lss]


def cmd_train(args):
    spec = _spec_from_args(args)
    mode = args.mode or spec.train.mode
    grid = _grid(spec, args)
    if len(grid) != 1:
        raise ConfigError("train takes a single --lambda-conf / --lambda-soft value")
    spec = replace(spec, train=replace(spec.train, lambda_conf=grid[0][0], lambda_soft=grid[0][1]))
    source, target = load_samples(spec)
    outcome = run_single(spec, source, target, mode, args.run, args.out)
    print(json.dumps({"mode": mode, "run": args.run, "uar": outcome.metrics.uar,
                      "selected_epoch": outcome.log.selected_epoch, "out": args.out}))


def cmd_experiment(args):
    spec = _spec_from_args(args)
    if args.mode:
        spec = replace(spec, modes=tuple(m for group in args.mode for m in group))
    if args.probe:
        spec = replace(spec, probe=True)
    grid = _grid(spec, args)
    for lc, ls in grid:
        cell = replace(spec, train=replace(spec.train, lambda_conf=lc, lambda_soft=ls))
        out = args.out if len(grid) == 1 else os.path.join(args.out, f"lconf{lc:g}_lsoft{ls:g}")
        results = run_experiment(cell, out)
        print(summary_table(cell, results), end="")


def cmd_gradcheck(args):
    results = run_suite(instances=args.instances, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def _target_eval(args):
    spec = _spec_from_args(args)
    source, target = load_samples(spec)
    if args.run is not None:
        _, _, target = make_splits(target, SplitSpec(run_index=args.run, seed=spec.train.seed))
    return spec, source, target


def cmd_probe(args):
    model = load_bundle(args.checkpoint)
    _, source, target = _target_eval(args)
    acc = domain_probe_auc(model, source, target, seed=args.seed or 0)
    print(json.dumps({"probe_accuracy": acc}))


def cmd_eval(args):
    model = load_bundle(args.checkpoint)
    _, _, target = _target_eval(args)
    print(json.dumps(evaluate(model, target).to_dict(), indent=2))


def build_parser():
    parser = argparse.ArgumentParser(prog="emoda", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True, data=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data", help="manifest CSV (default: synthetic corpus from the config)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth-data", help="write the synthetic corpus as manifest + feature files")
    common(p, data=False)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one mode on one split")
    common(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--run", type=int, default=0, help="split run index")
    p.add_argument("--lambda-conf", type=_floats)
    p.add_argument("--lambda-soft", type=_floats)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="modes x runs grid with aggregated metrics")
    common(p)
    p.add_argument("--mode", type=_modes, action="append", help="comma-separated modes (repeatable)")
    p.add_argument("--runs", type=int)
    p.add_argument("--probe", action="store_true", help="also report domain-probe accuracy per run")
    p.add_argument("--lambda-conf", type=_floats, help="comma-separated grid")
    p.add_argument("--lambda-soft", type=_floats, help="comma-separated grid")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    for name, func, text in (("probe", cmd_probe, "domain probe accuracy of a checkpoint"),
                             ("eval", cmd_eval, "UAR of a checkpoint on target samples")):
        p = sub.add_parser(name, help=text)
        common(p, out=False)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--run", type=int, help="restrict to the eval split of this run index")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (IngestionError, SplitError, EmodaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
