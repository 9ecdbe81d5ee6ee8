"""Command-line entry point: ``tlr train``, ``tlr score``, ``tlr eval``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from . import harness
from .data import load_dataset, split_chronological
from .errors import TLRError
from .modelfile import load_pipeline, save_pipeline
from .scoring import rank_intervals, score_dataset, write_scores_csv, write_scores_jsonl
from .training import RankDeficientWarning, load_config, s2_correlation, train

FORMATS_HELP = """\
input format (COO CSV):
  one access per line: interval_id,user_id,object_id
  non-negative integers; lines starting with '#' are ignored; duplicates
  are dropped. Optional timestamp sidecar (--timestamps): interval_id,timestamp
  with seconds since the epoch (UTC).

config file (train):
  'key = value' lines, '#' comments. Keys: split_fraction, k_folds, seed,
  clip_low, improvement_tol (relative), max_k, cv_mode (random|block),
  max_rank, min_intervals, and feature toggles prefixed 'features.':
  weekend, autoregressive, access_count, since_training, day_of_week,
  hour_of_day, lag, start_timestamp, interval_seconds.

model file:
  'TLRMODEL' line, one JSON header line (format_version, n, m, k, lambda,
  clip_low, regressor{d,names,weights,residual_std}, features, CV table,
  S2 history), then float64 little-endian arrays U, singular_values, V,
  G, H, reference_deviations in row-major order.

score output:
  CSV interval_id,observed_ll,predicted_ll,deviation,normalized_score,
  folded_users,folded_objects; --jsonl writes the same as JSON lines.
"""


def _floats(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers: {text!r}")
    return [int(v) for v in vals]


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlr", description="Low-rank temporal anomaly detection on access matrices.",
        epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit model and regressor, write a model file",
                       epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True, help="COO CSV access log")
    p.add_argument("--timestamps", help="interval_id,timestamp sidecar")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=True, help="model file to write")

    p = sub.add_parser("score", help="score intervals with a trained model",
                       epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True)
    p.add_argument("--timestamps")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="score CSV")
    p.add_argument("--jsonl", help="also write JSON lines here")
    p.add_argument("--top-k", type=_positive_int, default=10)

    p = sub.add_parser("eval", help="run a synthetic experiment protocol")
    p.add_argument("--mode", choices=("inject", "swap", "gap"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=_positive_int, default=200)
    p.add_argument("--m", type=_positive_int, default=200)
    p.add_argument("--rank", type=_positive_int, default=3)
    p.add_argument("--T", type=_positive_int, default=400, help="intervals to generate")
    p.add_argument("--epsilons", type=_floats, default=[1e-3, 1e-2, 1e-1])
    p.add_argument("--repetitions", type=_positive_int, default=25)
    p.add_argument("--same-regime", action="store_true",
                   help="swap mode: swap intervals of the same regime")
    p.add_argument("--T-values", dest="t_values", type=_ints, default=[50, 200])
    p.add_argument("--trials", type=_positive_int, default=50)
    p.add_argument("--report", help="CSV report path")
    p.add_argument("--roc-dir", help="directory for gnuplot ROC point dumps")
    return parser


def _spec(args, **kw):
    return harness.SyntheticSpec(n=args.n, m=args.m, rank=args.rank, T=args.T, seed=args.seed,
                                 **kw)


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    d = load_dataset(args.data, timestamps_path=args.timestamps)
    split_chronological(d, cfg.split_fraction)  # fail early on tiny inputs
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficientWarning)
        p = train(d, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_pipeline(p, args.out)
    _, s2 = split_chronological(d, cfg.split_fraction)
    print(f"lambda* = {p.lambda_star!r}")
    print(f"rank k = {p.model.k}")
    print("cv scores:")
    for lam in sorted(p.cv_scores, reverse=True):
        mark = " *" if lam == p.lambda_star else ""
        print(f"  {lam:.6g}\t{p.cv_scores[lam]:.6f}{mark}")
    print(f"s2 correlation rho = {s2_correlation(p, s2):.6f}")
    print(f"model written to {args.out}")
    return 0


def cmd_score(args) -> int:
    p = load_pipeline(args.model)
    d = load_dataset(args.data, timestamps_path=args.timestamps)
    scored = score_dataset(d, p)
    write_scores_csv(scored, args.out)
    if args.jsonl:
        write_scores_jsonl(scored, args.jsonl)
    print(f"scored {len(scored)} intervals -> {args.out}", file=sys.stderr)
    for s in rank_intervals(scored, args.top_k):
        print(f"{s.interval_id}\t{s.deviation:.6f}\t{s.normalized_score:.4f}")
    return 0


def cmd_eval(args) -> int:
    if args.mode == "gap":
        spec = harness.gap_spec(args.n, args.m, args.rank, args.seed)
        gaps = harness.generalization_gap(spec, args.t_values, args.trials, seed=args.seed)
        rows = [(T, float(np.median(g))) for T, g in gaps.items()]
        base = rows[0][1]
        print("T\tmedian_gap\tratio_to_first")
        for T, g in rows:
            print(f"{T}\t{g:.6g}\t{g / base:.4f}")
        if args.report:
            with open(args.report, "w") as fh:
                fh.write("T,median_gap\n")
                for T, g in rows:
                    fh.write(f"{T},{g!r}\n")
        return 0

    setup = harness.prepare(_spec(args))
    if args.mode == "inject":
        result = harness.run_injection_experiment(setup, args.epsilons, args.repetitions,
                                                  args.seed)
        params = [f"{e:g}" for e in args.epsilons]
    else:
        result = harness.run_swap_experiment(setup, args.repetitions, args.seed,
                                             cross_regime=not args.same_regime)
        params = ["swap"]
    print("param\tTLR_auc\tMEAN_auc")
    for prm in params:
        print(f"{prm}\t{result.auc(prm, 'TLR'):.4f}\t{result.auc(prm, 'MEAN'):.4f}")
    if args.report:
        result.write_report(args.report)
    if args.roc_dir:
        result.write_roc_points(args.roc_dir)
    return 0


COMMANDS = {"train": cmd_train, "score": cmd_score, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (TLRError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
