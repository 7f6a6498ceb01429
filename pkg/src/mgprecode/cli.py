"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError
from .harness import load_config, read_results, run_experiment
from .metrics import histogram_db
from .regularization import RegularizationInputs, scaling_tm, solve_gamma

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("mgprecode")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg, workers=args.workers)
    print(f"wrote {cfg.output_path} and {cfg.summary_path}")
    if not args.no_figures:
        from .plotting import render_report
        for p in render_report(table, cfg.output_path):
            print(f"wrote {p}")
    for a in table.aggregates:
        print(f"{a['scheme']:>14s} {a['regularizer']:>20s} snr={a['snr_db']:6.2f} dB "
              f"mean SINR={a['mean_sinr_db']:7.3f} dB")
    return EXIT_OK


def _cmd_gamma(args) -> int:
    inp = RegularizationInputs(lam=np.array(args.lam), sigma=np.array(args.sigma), k=args.k, P_m=args.pm)
    gamma = solve_gamma(inp)
    t = scaling_tm(inp.lam, gamma, inp.P_m)
    print(f"gamma={gamma!r}")
    print(f"t={t!r}")
    return EXIT_OK


def _cmd_histogram(args) -> int:
    rows = [r for r in read_results(args.input)
            if r["trial"] != "aggregate" and r["scheme"] == args.scheme and r["metric"] == args.metric
            and float(r["snr_db"]) == args.snr_db]
    regs = sorted({r["regularizer"] for r in rows})
    if args.regularizer is not None:
        rows = [r for r in rows if r["regularizer"] == args.regularizer]
    elif len(regs) > 1:
        raise ConfigError(f"several regularizers present for {args.scheme}: {regs}; pick one with --regularizer")
    if not rows:
        raise ConfigError(f"no {args.metric} rows for scheme {args.scheme!r} at {args.snr_db:g} dB")
    values = np.array([float(r["value"]) for r in rows])
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("bin_low_db", "bin_high_db", "count"))
        for lo, hi, count in histogram_db(values):
            w.writerow((repr(lo), repr(hi), count))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgprecode", description="Distributed precoding for multi-gateway "
                                                               "multibeam satellite links.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a Monte Carlo experiment")
    r.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    r.add_argument("--workers", type=int, default=1, help="worker processes (output does not depend on it)")
    r.add_argument("--no-figures", action="store_true", help="skip the PNG report figures")
    r.set_defaults(func=_cmd_run)

    g = sub.add_parser("gamma-solve", help="solve for the regularization factor on explicit inputs")
    g.add_argument("--lambda", dest="lam", required=True, type=_float_list, help="eigenvalues, comma-separated")
    g.add_argument("--sigma", required=True, type=_float_list, help="leakage diagonal, comma-separated")
    g.add_argument("--k", required=True, type=int, help="streams per cluster")
    g.add_argument("--pm", required=True, type=float, help="cluster power budget")
    g.set_defaults(func=_cmd_gamma)

    h = sub.add_parser("histogram", help="1 dB histogram of a per-user metric from a results CSV")
    h.add_argument("--input", required=True, type=Path, help="results CSV written by `run`")
    h.add_argument("--scheme", required=True)
    h.add_argument("--snr-db", required=True, type=float, help="SNR point to select")
    h.add_argument("--regularizer", default=None, help="required when the CSV holds several OBBF arms")
    h.add_argument("--metric", default="sinr_db", choices=("sinr_db", "sir_db"))
    h.add_argument("--output", type=Path, default=None, help="write here instead of stdout")
    h.set_defaults(func=_cmd_histogram)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
