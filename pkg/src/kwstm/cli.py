"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from kwstm import harness
from kwstm.errors import ConfigError, DataError
from kwstm.harness import ExperimentConfig, SweepSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

logger = logging.getLogger("kwstm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> (section, field, type)
_OVERRIDES = {
    "window_length_s": ("mfcc", "window_length_s", float),
    "window_step_s": ("mfcc", "window_step_s", float),
    "pre_emphasis": ("mfcc", "pre_emphasis", float),
    "n_filters": ("mfcc", "n_filters", int),
    "n_ceps": ("mfcc", "n_ceps", int),
    "fft_size": ("mfcc", "fft_size", int),
    "sample_rate": ("mfcc", "sample_rate", int),
    "clauses_per_class": ("hyperparams", "clauses_per_class", int),
    "threshold": ("hyperparams", "T", int),
    "s_param": ("hyperparams", "s", float),
    "states": ("hyperparams", "N", int),
    "epochs": ("hyperparams", "epochs", int),
    "seed": ("hyperparams", "seed", int),
    "corpus_root": (None, "corpus_root", str),
    "keywords": (None, "keywords", str),
    "n_bins": (None, "n_bins", int),
    "output_dir": (None, "output_dir", str),
    "cache_dir": (None, "cache_dir", str),
    "split_seed": (None, "split_seed", int),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override its values")
    for name, (_, _, typ) in _OVERRIDES.items():
        help_text = "preset (baseline3, baseline4, similar4, nine) or comma list" if name == "keywords" else None
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None, help=help_text)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    data = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    mfcc = dict(data.get("mfcc") or {})
    hyper = dict(data.get("hyperparams") or {})
    top = {k: v for k, v in data.items() if k not in ("mfcc", "hyperparams")}
    for name, (section, key, _) in _OVERRIDES.items():
        value = getattr(args, name, None)
        if value is None:
            continue
        {"mfcc": mfcc, "hyperparams": hyper, None: top}[section][key] = value
    config = ExperimentConfig.from_dict({**top, "mfcc": mfcc, "hyperparams": hyper})
    if getattr(args, "sweep_param", None):
        values = [_parse_value(args.sweep_param, v) for v in args.sweep_values]
        config = replace(config, sweep=SweepSpec(args.sweep_param, values))
    return config


def _parse_value(parameter: str, raw: str):
    if parameter == "keywords":
        return raw
    if parameter in ("clauses_per_class", "T", "n_bins"):
        return int(raw)
    return float(raw)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kwstm", description="Keyword spotting with a Tsetlin Machine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="extract MFCCs, fit the encoder, write the feature cache")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train on the feature cache")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="accuracy report and confusion matrix for a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cache", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test", "validation"], default="test")
    p.add_argument("--keywords", default=None, help="expected keyword list; must match the model")
    p.add_argument("--output-dir", type=Path, default=None)

    p = sub.add_parser("sweep", help="prepare and train once per value of one parameter")
    _add_config_flags(p)
    p.add_argument("--sweep-param", choices=harness.SWEEP_PARAMETERS, default=None)
    p.add_argument("--sweep-values", nargs="+", default=[], help="values; keyword sets are presets or comma lists")

    p = sub.add_parser("feature-stats", help="per-feature mean/variance of the training split")
    p.add_argument("--cache", type=Path, required=True)
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("xor-selftest", help="check that the Tsetlin Machine learns XOR")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=200)
    return parser


def _run(args) -> int:
    if args.command == "prepare":
        cache = harness.cmd_prepare(build_config(args))
        print(cache)
    elif args.command == "train":
        record = harness.cmd_train(build_config(args))
        print(json.dumps({k: record.to_dict()[k] for k in ("train_acc", "test_acc", "val_acc", "overfit_gap")}))
    elif args.command == "eval":
        keywords = harness.resolve_keywords(args.keywords) if args.keywords else None
        report = harness.cmd_eval(args.model, args.cache, args.split, args.output_dir, keywords)
        print(json.dumps({k: report[k] for k in ("split", "samples", "accuracy")}))
    elif args.command == "sweep":
        config = build_config(args)
        rows = harness.cmd_sweep(config)
        print(Path(config.output_dir) / f"sweep_{config.sweep.parameter}.csv")
        if any(r["status"] != "ok" for r in rows):
            logger.warning("%d sweep point(s) failed", sum(r["status"] != "ok" for r in rows))
    elif args.command == "feature-stats":
        output = args.output or args.cache / "feature_stats.csv"
        rows = harness.cmd_feature_stats(args.cache, output)
        print(f"{output}: {len(rows)} features, {sum(r['zero_variance'] for r in rows)} with zero variance")
    elif args.command == "xor-selftest":
        results = harness.xor_selftest(args.seeds, args.epochs)
        for seed, acc in results.items():
            print(f"seed {seed}: {acc:.1f}%")
        return EXIT_OK if all(acc == 100.0 for acc in results.values()) else EXIT_INTERNAL
    return EXIT_OK


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"kwstm: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"kwstm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"kwstm: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
