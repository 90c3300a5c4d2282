"""Command-line entry point: ``twinbeam calibrate | sweep | report``.

Exit status is 0 on success, 1 on any error, and 2 when a report has no data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigError, TwinbeamError
from .estimators import Calibration
from .runner import REPORT_FILE, format_summary, run_calibrate, run_sweep, summarize_report

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _common(p):
    p.add_argument("--config", metavar="PATH", help="dotted key=value config file (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", metavar="DIR", help="output directory, overrides output.dir")
    p.add_argument("--camera", type=_on_off, metavar="on|off", help="route frames through the camera + ROI model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinbeam", description="Twin-beam absorption estimation: calibration runs, sweeps, and report summaries."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="sample-free calibration run")
    _common(p)

    p = sub.add_parser("sweep", help="absorption sweep: report CSV, histograms, Gaussian fits")
    _common(p)
    p.add_argument("--jobs", type=int, default=1, help="worker threads over alpha set points")
    p.add_argument("--calibration", metavar="PATH", help="reuse a saved calibration (counts-only mode)")

    p = sub.add_parser("report", help="summarize a sweep report CSV")
    p.add_argument("csv", nargs="?", help=f"report CSV (default: <out>/{REPORT_FILE})")
    p.add_argument("--config", metavar="PATH", help="take output.dir and report.k_sigma from this config")
    p.add_argument("--out", metavar="DIR", help="output directory holding the report (default: out)")
    p.add_argument("-k", "--k-sigma", type=float, help="flag rows with gamma - 1 > k * gamma_err (default 3)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _calibrate(args) -> int:
    cfg = _config(args)
    calib = run_calibrate(cfg, args.camera)
    print(f"calibration written to {Path(cfg.output_dir) / 'calibration.txt'}")
    print(f"frames used        : {calib.n_frames_used}")
    print(f"<N1p>              : {calib.n1p_mean:.6g}")
    print(f"<N2>               : {calib.n2_mean:.6g}")
    print(f"C                  : {calib.C:.6g}")
    print(f"deltaE             : {calib.deltaE:.6g}")
    print(f"sigma              : {calib.sigma:.4f}")
    print(f"heralding (1-sigma): {1 - calib.sigma:.1%}")
    return EXIT_OK


def _sweep(args) -> int:
    cfg = _config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    calib = Calibration.load(args.calibration) if args.calibration else None
    reports = run_sweep(cfg, args.camera, jobs=args.jobs, calibration=calib)
    print(f"wrote {len(reports)} set points to {Path(cfg.output_dir) / REPORT_FILE}")
    for r in reports:
        print(f"alpha={r.alpha_true:<8.4g} gamma={r.gamma:.4f} +/- {r.gamma_err:.4f}  exposure={r.exposure_ratio:.4f}")
    return EXIT_OK


def _report(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    k_sigma = cfg.report_k_sigma if args.k_sigma is None else args.k_sigma
    if k_sigma < 0:
        raise ConfigError("--k-sigma", "must be >= 0")
    path = args.csv or str(Path(args.out or cfg.output_dir) / REPORT_FILE)
    lines = summarize_report(path, k_sigma)
    if not lines:
        print(f"{path}: no data")
        return EXIT_EMPTY
    print(format_summary(lines, k_sigma))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"calibrate": _calibrate, "sweep": _sweep, "report": _report}[args.command]
    try:
        return handler(args)
    except (TwinbeamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
