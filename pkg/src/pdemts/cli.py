"""Command-line entry points.

    pdemts ingest   --data FILE --out DIR [--lag N ...]
    pdemts extract  --config FILE --seed N --out DIR
    pdemts train    --config FILE --seed N --out DIR
    pdemts evaluate --report DIR
    pdemts compare  --out FILE DIR [DIR ...]

extract/train require an explicit seed so every reported number can be
reproduced from the emitted resolved config.
"""

import argparse
import os
import sys

from . import frame, runner
from .errors import ConfigError, DataError, StageError


def _add_config_args(p, need_seed):
    p.add_argument("--config", required=True, help="key = value run configuration file")
    p.add_argument("--seed", type=int, required=need_seed,
                   help="RNG seed (required; recorded in the resolved config)")
    p.add_argument("--out", required=True, help="report directory to create")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def _overrides(args, phase):
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        over[k.strip()] = v.strip()
    if args.seed is not None:
        over["seed"] = str(args.seed)
    over["phase"] = phase
    return over


def cmd_ingest(args):
    cfg = runner.RunConfig(dataset=args.data, lag=args.lag,
                           train_size=args.train_size, val_size=args.val_size,
                           test_size=args.test_size)
    ing = runner.ingest_pipeline(cfg)
    os.makedirs(args.out, exist_ok=True)
    frame.write_frame_csv(ing.norm_frame, os.path.join(args.out, "normalized.csv"))
    ing.stats.write_csv(os.path.join(args.out, "normalization_stats.csv"))
    runner.write_manifest(ing.manifest, os.path.join(args.out, "manifest.txt"))
    print(f"ingested {ing.norm_frame.n} rows -> {args.out}")
    print(f"dropped: {ing.manifest['dropped_columns']}")
    return 0


def cmd_run(args, phase):
    cfg = runner.parse_config(args.config, overrides=_overrides(args, phase))
    outdir = runner.run_experiment(cfg, args.out)
    print(f"report written to {outdir}")
    for line in open(os.path.join(outdir, "metrics.csv")):
        print("  " + line.rstrip())
    return 0


def cmd_evaluate(args):
    mismatches = runner.verify_report(args.report)
    if mismatches:
        print(f"FAIL: {len(mismatches)} metric(s) do not match predictions.csv")
        for v, metric, stored, recomputed in mismatches:
            print(f"  {v} {metric}: stored={stored} recomputed={recomputed}")
        return 1
    print("OK: metrics.csv matches predictions.csv")
    return 0


def cmd_compare(args):
    out = runner.compare_runs(args.reports, args.out)
    print(f"comparison written to {out}")
    for line in open(out):
        print("  " + line.rstrip())
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pdemts", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, repair, normalize, and window the dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lag", type=int, default=30)
    p.add_argument("--train-size", type=int, default=6000)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=500)

    p = sub.add_parser("extract", help="discover constraint equations")
    _add_config_args(p, need_seed=True)

    p = sub.add_parser("train", help="train a forecaster (prediction phase)")
    _add_config_args(p, need_seed=True)

    p = sub.add_parser("evaluate", help="recompute a report's metrics from predictions.csv")
    p.add_argument("--report", required=True)

    p = sub.add_parser("compare", help="side-by-side metrics of matching reports")
    p.add_argument("--out", required=True)
    p.add_argument("reports", nargs="+")

    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            return cmd_ingest(args)
        if args.command == "extract":
            return cmd_run(args, "extract")
        if args.command == "train":
            return cmd_run(args, "predict")
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "compare":
            return cmd_compare(args)
    except (ConfigError, DataError, StageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
