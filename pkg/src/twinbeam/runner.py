"""Calibration runs, absorption sweeps, and report summaries.

Every random draw derives from the master seed via :mod:`twinbeam.streams`.
The calibration batch, each alpha set point, and each baseline get their own
stream, so outputs do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import streams
from .analysis import (
    PerformanceReport,
    baseline_curves,
    fit_gaussian,
    format_number,
    histogram,
    read_report_csv,
    series_statistics,
    snl_variance,
    write_report_csv,
)
from .config import RunConfig
from .errors import TwinbeamError
from .estimators import Calibration, calibrate, drift_correct, estimate_corrected, estimate_direct
from .frames_io import RoiSpec, fit_batch_rois, recover_counts
from .model import FrameBatch, SampleParams, generate_batch

log = logging.getLogger(__name__)

CALIBRATION_FILE = "calibration.txt"
REPORT_FILE = "report.csv"
FITS_FILE = "fits.csv"


class SweepError(TwinbeamError):
    pass


@dataclass(frozen=True)
class SweepPoint:
    report: PerformanceReport
    direct: np.ndarray
    corrected: np.ndarray


def _acquire(cfg: RunConfig, alpha: float, n_frames: int, seed: int, camera_on: bool, rois=None):
    camera = cfg.camera if camera_on else None
    batch = generate_batch(cfg.source, SampleParams(alpha), camera, n_frames, seed, layout=cfg.layout)
    if not camera_on:
        return batch, None
    if rois is None:
        rois = fit_batch_rois(batch, cfg.roi_half_width_sd)
    recovered = recover_counts(batch, rois=rois, capture_correction=cfg.capture_correction)
    # Pixel rows are not needed downstream; drop them to keep memory flat.
    return FrameBatch(recovered.n1, recovered.n2, seed=batch.seed, params_snapshot=batch.params_snapshot), rois


def prepare_calibration(cfg: RunConfig, camera_on: bool | None = None) -> tuple[Calibration, tuple[RoiSpec, RoiSpec] | None]:
    """Sample-free calibration (and, in camera mode, the beam ROIs fitted on it)."""
    camera_on = cfg.camera_enabled if camera_on is None else camera_on
    seed = streams.derive_seed(cfg.seed, streams.CALIBRATION)
    batch, rois = _acquire(cfg, 0.0, cfg.calibration_frames, seed, camera_on)
    return calibrate(batch), rois


def sweep_point(cfg: RunConfig, index: int, alpha: float, calib: Calibration, rois=None, camera_on: bool = False) -> SweepPoint:
    """Run the series protocol at one absorption set point."""
    protocol = cfg.protocol
    seed = streams.derive_seed(cfg.seed, streams.SWEEP, index)
    try:
        batch, _ = _acquire(cfg, alpha, protocol.n_frames, seed, camera_on, rois)
    except TwinbeamError as exc:
        raise SweepError(f"alpha={alpha!r} (set point {index}), acquisition: {exc}") from exc
    direct = np.empty(len(batch))
    corrected = np.empty(len(batch))
    for s, series in enumerate(batch.split(protocol.n_series)):
        lo = s * protocol.frames_per_series
        hi = lo + protocol.frames_per_series
        try:
            cal_s = drift_correct(calib, float(np.mean(series.n2)))
            direct[lo:hi] = estimate_direct(series, cal_s).alpha_hat
            corrected[lo:hi] = estimate_corrected(series, cal_s).alpha_hat
        except TwinbeamError as exc:
            raise SweepError(f"alpha={alpha!r} (set point {index}), series {s}: {exc}") from exc
    try:
        stats_c = series_statistics(corrected, protocol)
        stats_d = series_statistics(direct, protocol)
        var_cl = snl_variance(alpha, cfg.eta_d, calib.n1p_mean)
        curves = baseline_curves(
            [alpha], cfg.source, cfg.eta_d, calib.n1p_mean,
            streams.derive_seed(cfg.seed, streams.BASELINE, index), n_frames=cfg.baseline_frames,
        )
        report = PerformanceReport.build(
            alpha, stats_c.alpha_mean, stats_d.var_mean, stats_c.var_mean, stats_c.var_err, var_cl,
            {name: float(v[0]) for name, v in curves.items()},
            eta_d=cfg.eta_d, eta_d_uncertainty=cfg.eta_d_uncertainty,
        )
    except TwinbeamError as exc:
        raise SweepError(f"alpha={alpha!r} (set point {index}), analysis: {exc}") from exc
    return SweepPoint(report, direct, corrected)


def run_sweep_points(cfg: RunConfig, calib: Calibration, rois=None, camera_on: bool = False, jobs: int = 1) -> list[SweepPoint]:
    def one(item):
        index, alpha = item
        log.info("set point %d: alpha=%g", index, alpha)
        return sweep_point(cfg, index, alpha, calib, rois, camera_on)

    items = list(enumerate(cfg.alpha_list))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def write_histograms(points: list[SweepPoint], out_dir: Path) -> None:
    """Per-alpha histogram files plus a table of Gaussian fits."""
    fit_rows = []
    for index, p in enumerate(points):
        counts_d, edges = histogram(p.direct)
        counts_c, _ = np.histogram(p.corrected, bins=edges)
        with open(out_dir / f"hist_{index:02d}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count_direct", "count_corrected"])
            for lo, hi, cd, cc in zip(edges[:-1], edges[1:], counts_d, counts_c):
                w.writerow([format_number(lo), format_number(hi), int(cd), int(cc)])
        try:
            fd = fit_gaussian(p.direct)
            fc = fit_gaussian(p.corrected)
        except TwinbeamError as exc:
            raise SweepError(f"alpha={p.report.alpha_true!r} (set point {index}), histogram fit: {exc}") from exc
        snl_sd = math.sqrt(p.report.var_cl)
        fit_rows.append((p.report.alpha_true, "direct", *fd))
        fit_rows.append((p.report.alpha_true, "corrected", *fc))
        fit_rows.append((p.report.alpha_true, "snl", fc.mean, snl_sd, fc.amplitude))
    with open(out_dir / FITS_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha_true", "estimator", "mean", "sd", "amplitude"])
        for alpha, kind, mean, sd, amp in fit_rows:
            w.writerow([format_number(alpha), kind, format_number(mean), format_number(sd), format_number(amp)])


def run_calibrate(cfg: RunConfig, camera_on: bool | None = None) -> Calibration:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib, _ = prepare_calibration(cfg, camera_on)
    calib.save(out_dir / CALIBRATION_FILE)
    return calib


def run_sweep(cfg: RunConfig, camera_on: bool | None = None, jobs: int = 1, calibration: Calibration | None = None) -> list[PerformanceReport]:
    """Full sweep; writes ``report.csv``, ``fits.csv``, ``hist_NN.csv`` and the calibration used."""
    camera_on = cfg.camera_enabled if camera_on is None else camera_on
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if calibration is None or camera_on:
        fresh, rois = prepare_calibration(cfg, camera_on)
        calibration = calibration or fresh
    else:
        rois = None
    calibration.save(out_dir / CALIBRATION_FILE)
    points = run_sweep_points(cfg, calibration, rois, camera_on, jobs)
    reports = [p.report for p in points]
    write_report_csv(reports, out_dir / REPORT_FILE)
    write_histograms(points, out_dir)
    return reports


@dataclass(frozen=True)
class ReportLine:
    alpha: float
    gamma: float
    gamma_err: float
    exposure_ratio: float
    flagged: bool


def summarize_report(csv_path, k_sigma: float = 3.0) -> list[ReportLine]:
    """Per-alpha lines; a row is flagged when gamma - 1 exceeds ``k_sigma`` gamma errors."""
    return [
        ReportLine(r["alpha_true"], r["gamma"], r["gamma_err"], r["exposure_ratio"],
                   r["gamma"] - 1.0 > k_sigma * r["gamma_err"])
        for r in read_report_csv(csv_path)
    ]


def format_summary(lines: list[ReportLine], k_sigma: float) -> str:
    out = [f"{'alpha':>10}  {'gamma':>8}  {'+/-':>7}  {'exposure':>8}  advantage (> {k_sigma:g} sd)"]
    for ln in lines:
        flag = "quantum advantage detected" if ln.flagged else "-"
        out.append(f"{ln.alpha:>10.4g}  {ln.gamma:>8.4f}  {ln.gamma_err:>7.4f}  {ln.exposure_ratio:>8.4f}  {flag}")
    return "\n".join(out)
