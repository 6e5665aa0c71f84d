"""``emgpipe`` command line.

Exit codes: 0 ok, 2 configuration, 3 missing upstream stage, 4 data
validation, 5 numerical failure. The output root comes from ``--out``,
then ``$EMGPIPE_OUT``, then ``output_dir`` in the config file, then
``./emgpipe-out``.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as C
from .errors import ConfigError, EmgpipeError
from .pipeline import run_stage

ENV_OUT = "EMGPIPE_OUT"
DEFAULT_OUT = "emgpipe-out"
CATEGORIES = {2: "config", 3: "dependency", 4: "data", 5: "numerical"}


def _csv_list(conv):
    def parse(text):
        try:
            return [conv(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON config file")
    common.add_argument("--out", type=Path, help=f"output root (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    common.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. preprocess.stage_order=envelope_then_filter")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--force", action="store_true", help="rerun even when inputs are unchanged")
    common.add_argument("--jobs", type=int, default=1, help="worker cap for parallel sections")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="emgpipe", description="sEMG gesture pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic recordings")
    s.add_argument("--subjects", type=int, dest="n_subjects")
    s.add_argument("--channels", type=int, dest="n_channels")

    s = sub.add_parser("ingest", parents=[common], help="load CSV or MAT recordings")
    s.add_argument("paths", nargs="*", type=Path)
    s.add_argument("--format", choices=("auto", "csv", "mat"))
    s.add_argument("--sample-rate", type=float)

    s = sub.add_parser("preprocess", parents=[common], help="filter, envelope and normalize")
    s.add_argument("--notch", type=float)
    s.add_argument("--notch-q", type=float)
    s.add_argument("--cutoff", type=float)
    s.add_argument("--order", type=int)
    s.add_argument("--stage-order", choices=("filter_first", "envelope_first", "filter_then_envelope", "envelope_then_filter"))
    s.add_argument("--normalization", choices=("max_abs", "z_score", "none"))
    s.add_argument("--no-zero-phase", action="store_true")

    s = sub.add_parser("features", parents=[common], help="window the envelopes and extract features")
    s.add_argument("--window-ms", type=float)
    s.add_argument("--no-rest", action="store_true", help="leave rest windows out")

    s = sub.add_parser("cluster", parents=[common], help="Mahalanobis complete-linkage gesture clustering")
    s.add_argument("--k", type=int)

    s = sub.add_parser("select", parents=[common], help="hybrid feature selection")
    s.add_argument("--mi-min", type=float)
    s.add_argument("--importance-min", type=float)
    s.add_argument("--retain", type=float)
    s.add_argument("--unit", choices=("family", "column"))
    s.add_argument("--replication", action="store_true", help="tune mi_min to keep target_units units")
    s.add_argument("--drop-channels", type=int)

    s = sub.add_parser("train", parents=[common], help="train classifiers on the feature table")
    s.add_argument("--model", type=_csv_list(str), help="et, mlp, knn, cart (comma separated)")

    s = sub.add_parser("evaluate", parents=[common], help="cross-validate the trained model kinds")
    s.add_argument("--folds", type=int)
    s.add_argument("--split-mode", choices=("window", "repetition"))

    s = sub.add_parser("compare", parents=[common], help="rank model kinds on identical folds")
    s.add_argument("--models", type=_csv_list(str))
    s.add_argument("--folds", type=int)
    s.add_argument("--split-mode", choices=("window", "repetition"))

    s = sub.add_parser("windows", parents=[common], help="compare window lengths")
    s.add_argument("--windows", type=_csv_list(float))
    s.add_argument("--model")

    sub.add_parser("report", parents=[common], help="bundle artifacts into a run summary")
    return p


FLAG_PATHS = {
    "n_subjects": "dataset.synthetic.n_subjects", "n_channels": "dataset.synthetic.n_channels",
    "format": "dataset.format", "sample_rate": "dataset.sample_rate_hz",
    "notch": "preprocess.notch_hz", "notch_q": "preprocess.notch_q", "cutoff": "preprocess.lowpass_cutoff_hz",
    "order": "preprocess.lowpass_order", "stage_order": "preprocess.stage_order",
    "normalization": "preprocess.normalization", "window_ms": "features.window_ms", "k": "clustering.k",
    "mi_min": "selection.mi_min", "importance_min": "selection.importance_min",
    "retain": "selection.retain_ratio", "unit": "selection.unit", "drop_channels": "selection.drop_channels",
    "model": "models.train", "models": "evaluation.compare", "folds": "evaluation.folds",
    "split_mode": "evaluation.split_mode", "windows": "evaluation.windows_ms", "seed": "seed",
}


def _nest(path: str, value) -> dict:
    node = value
    for part in reversed(path.split(".")):
        node = {part: node}
    return node


def flag_overrides(args) -> list:
    out = []
    for attr, path in FLAG_PATHS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if args.command == "windows" and attr == "model":
            path = "evaluation.window_model"
        out.append(_nest(path, value))
    if getattr(args, "no_zero_phase", False):
        out.append(_nest("preprocess.zero_phase", False))
    if getattr(args, "no_rest", False):
        out.append(_nest("features.include_rest", False))
    if getattr(args, "replication", False):
        out.append(_nest("selection.replication", True))
    if args.command == "ingest" and args.paths:
        out.append({"dataset": {"source": "files", "paths": [str(p.resolve()) for p in args.paths]}})
    return out


def output_root(args, cfg: dict) -> Path:
    if args.out is not None:
        return args.out
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    return Path(DEFAULT_OUT)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = C.build(args.config, list(args.sets) + flag_overrides(args))
        run_stage(args.command, cfg, output_root(args, cfg), args.force, args.jobs)
    except EmgpipeError as exc:
        category = CATEGORIES.get(exc.exit_code, "internal")
        print(f"emgpipe: {category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
