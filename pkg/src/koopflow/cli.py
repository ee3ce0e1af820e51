"""Command-line entry point.

Subcommands:
    run <config>             execute an experiment config, write artifacts
    table <dir>              CS/ME comparison table from metrics.csv files
    fields <dir> --iter K    extract truth/estimate/EPE/uncertainty grids
    ingest <csv>             validate an ocean-current CSV (optional fetch)

KOOPFLOW_OUTPUT_ROOT, when set, prefixes relative output directories.
"""

import argparse
import logging
import sys

import numpy as np

from .data import fetch_erddap_csv, ingest_erddap_csv
from .errors import KoopflowError
from .experiment import collect_metric_rows, extract_fields, format_table, run_experiment
from .config import load_config
from .fields import export_gridded_csv


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    summary = run_experiment(cfg)
    print(f"wrote {summary.out_dir / 'metrics.csv'}")
    for result in summary.results:
        if not result.completed:
            print(f"trial {result.trial} aborted: {result.reason}", file=sys.stderr)
    return 0 if summary.ok else 1


def _cmd_table(args) -> int:
    rows = collect_metric_rows(args.results_dir)
    sys.stdout.write(format_table(rows))
    return 0


def _cmd_fields(args) -> int:
    try:
        paths = extract_fields(args.results_dir, args.iter, trial=args.trial)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


def _cmd_ingest(args) -> int:
    if args.fetch:
        fetch_erddap_csv(args.fetch, args.csv)
        print(f"fetched {args.fetch} -> {args.csv}")
    field = ingest_erddap_csv(args.csv)
    n_masked = 0
    if field.domain.obstacle_mask is not None:
        n_masked = int(field.domain.obstacle_mask.blocked.sum())
    finite_u = field.u[np.isfinite(field.u)]
    finite_v = field.v[np.isfinite(field.v)]
    speed = np.hypot(finite_u, finite_v)
    print(f"{args.csv}: {field.nx} x {field.ny} lattice, {n_masked} masked node(s)")
    print(f"domain [{field.domain.x_min:g}, {field.domain.x_max:g}] x "
          f"[{field.domain.y_min:g}, {field.domain.y_max:g}]")
    print(f"speed min/mean/max = {speed.min():.6g}/{speed.mean():.6g}/{speed.max():.6g}")
    if args.out:
        export_gridded_csv(field, args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to the config file")
    p_run.set_defaults(func=_cmd_run)

    p_table = sub.add_parser("table", help="print a CS/ME comparison table")
    p_table.add_argument("results_dir", help="directory containing metrics.csv files")
    p_table.set_defaults(func=_cmd_table)

    p_fields = sub.add_parser("fields", help="extract per-iteration grid dumps")
    p_fields.add_argument("results_dir")
    p_fields.add_argument("--iter", type=int, required=True,
                          help="0-based iteration (k = trained on k+1 samples)")
    p_fields.add_argument("--trial", type=int, default=0)
    p_fields.set_defaults(func=_cmd_fields)

    p_ingest = sub.add_parser("ingest", help="validate an ocean-current CSV")
    p_ingest.add_argument("csv", help="CSV path (also the fetch destination)")
    p_ingest.add_argument("--fetch", metavar="URL", default=None,
                          help="download the CSV from a griddap URL first")
    p_ingest.add_argument("--out", default=None,
                          help="re-export the parsed lattice as x,y,u,v CSV")
    p_ingest.set_defaults(func=_cmd_ingest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KoopflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
