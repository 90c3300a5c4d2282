"""Figures of merit for absorption estimation.

The reference for any strategy is the ideal classical scheme: a Poisson beam
detected with perfect efficiency, whose photon number is scaled so that it
matches the photons the experiment sends through the sample. Its estimator
variance is ``(1 - alpha) * eta_d / <N1p>``. ``gamma`` is that variance
divided by the achieved one, and ``1 / gamma`` is the relative probe-photon
budget needed for equal precision.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import streams
from .errors import BatchFormatError, FitError, InsufficientDataError, ParameterError, ProtocolError
from .estimators import AbsorptionEstimate, Calibration, estimate_differential
from .model import FrameBatch, SampleParams, SourceParams, generate_independent_batch

CSV_COLUMNS = (
    "alpha_true",
    "alpha_mean",
    "var_direct",
    "var_corrected",
    "var_cl_ideal",
    "var_cl_detected",
    "var_cl_differential",
    "gamma",
    "gamma_err",
    "exposure_ratio",
)
BASELINE_NAMES = ("ideal", "detected", "differential")


@dataclass(frozen=True)
class SeriesProtocol:
    n_series: int = 10
    frames_per_series: int = 100

    def __post_init__(self):
        if self.n_series < 2 or self.frames_per_series < 2:
            raise ParameterError(
                f"protocol needs >= 2 series of >= 2 frames, got {self.n_series} x {self.frames_per_series}"
            )

    @property
    def n_frames(self) -> int:
        return self.n_series * self.frames_per_series


class SeriesStats(NamedTuple):
    var_mean: float
    var_err: float
    alpha_mean: float


class GaussianFit(NamedTuple):
    mean: float
    sd: float
    amplitude: float


@dataclass(frozen=True)
class PerformanceReport:
    """Estimator performance at one absorption set point."""

    alpha_true: float
    alpha_mean: float
    var_direct: float
    var_exp: float
    var_exp_err: float
    var_cl: float
    gamma: float
    gamma_err: float
    exposure_ratio: float
    baselines: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.var_exp > 0:
            raise ParameterError(f"var_exp must be > 0, got {self.var_exp}")

    @classmethod
    def build(cls, alpha_true, alpha_mean, var_direct, var_exp, var_exp_err, var_cl, baselines,
              eta_d=None, eta_d_uncertainty=0.0):
        """Derive gamma, its error, and the exposure ratio from the variances.

        ``var_cl`` is exact, so the relative error of gamma is that of
        ``var_exp``. A detector-efficiency uncertainty, when given, adds in
        quadrature.
        """
        gamma = gamma_ratio(var_cl, var_exp)
        rel = var_exp_err / var_exp
        if eta_d_uncertainty and eta_d:
            rel = math.hypot(rel, eta_d_uncertainty / eta_d)
        return cls(
            alpha_true=float(alpha_true),
            alpha_mean=float(alpha_mean),
            var_direct=float(var_direct),
            var_exp=float(var_exp),
            var_exp_err=float(var_exp_err),
            var_cl=float(var_cl),
            gamma=gamma,
            gamma_err=gamma * rel,
            exposure_ratio=exposure_ratio(gamma),
            baselines={k: float(v) for k, v in baselines.items()},
        )

    @property
    def var_corrected(self) -> float:
        return self.var_exp

    def csv_row(self) -> list[str]:
        values = (
            self.alpha_true,
            self.alpha_mean,
            self.var_direct,
            self.var_exp,
            self.baselines.get("ideal", self.var_cl),
            self.baselines.get("detected", math.nan),
            self.baselines.get("differential", math.nan),
            self.gamma,
            self.gamma_err,
            self.exposure_ratio,
        )
        return [format_number(v) for v in values]


def format_number(x: float) -> str:
    """Locale-independent scientific notation that round-trips a double."""
    return format(float(x), ".16e")


def _alpha_values(estimates) -> np.ndarray:
    if isinstance(estimates, AbsorptionEstimate):
        return np.atleast_1d(np.asarray(estimates.alpha_hat, dtype=float))
    if isinstance(estimates, np.ndarray):
        return estimates.astype(float).ravel()
    parts = [e.alpha_hat if isinstance(e, AbsorptionEstimate) else e for e in estimates]
    return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts]) if parts else np.empty(0)


def noise_reduction_factor(batch: FrameBatch) -> float:
    """``Var(n1 - n2) / (<n1> + <n2>)``: 0 for perfect correlation, 1 for independent shot-noise beams."""
    if len(batch) < 2:
        raise InsufficientDataError(f"need at least 2 frames, got {len(batch)}")
    n1 = np.asarray(batch.n1, dtype=float)
    n2 = np.asarray(batch.n2, dtype=float)
    total = n1.mean() + n2.mean()
    if not total > 0:
        raise InsufficientDataError("batch has zero mean intensity")
    return float(np.var(n1 - n2, ddof=1) / total)


def snl_variance(alpha, eta_d: float, n1p_mean: float):
    """Variance of the ideal classical absorption estimate."""
    a = np.asarray(alpha, dtype=float)
    if np.any(~((a >= 0) & (a <= 1))):
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha!r}")
    if not 0 < eta_d <= 1:
        raise ParameterError(f"eta_d must lie in (0, 1], got {eta_d!r}")
    if not n1p_mean > 0:
        raise ParameterError(f"n1p_mean must be > 0, got {n1p_mean!r}")
    out = (1.0 - a) * eta_d / n1p_mean
    return float(out) if out.ndim == 0 else out


def gamma_ratio(var_cl: float, var_exp: float) -> float:
    if not var_exp > 0:
        raise ParameterError(f"var_exp must be > 0, got {var_exp!r}")
    return var_cl / var_exp


def exposure_ratio(gamma: float) -> float:
    """Probe photons needed relative to the ideal classical scheme at equal precision."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be > 0, got {gamma!r}")
    return 1.0 / gamma


def series_statistics(estimates, protocol: SeriesProtocol) -> SeriesStats:
    """Mean of the per-series variances, its standard error, and the grand mean."""
    a = _alpha_values(estimates)
    if a.size != protocol.n_frames:
        raise ProtocolError(
            f"expected {protocol.n_series} x {protocol.frames_per_series} = {protocol.n_frames} estimates, got {a.size}"
        )
    v = a.reshape(protocol.n_series, protocol.frames_per_series).var(axis=1, ddof=1)
    return SeriesStats(float(v.mean()), float(v.std(ddof=1) / math.sqrt(protocol.n_series)), float(a.mean()))


def histogram(estimates, n_bins: int | None = None):
    """Counts and edges; ``n_bins=None`` uses Freedman-Diaconis bin width."""
    a = _alpha_values(estimates)
    bins = "fd" if n_bins is None else int(n_bins)
    edges = np.histogram_bin_edges(a, bins=bins)
    if edges.size < 6:
        edges = np.histogram_bin_edges(a, bins=5)
    counts, edges = np.histogram(a, bins=edges)
    return counts, edges


def _gauss(x, amp, mean, sd):
    return amp * np.exp(-0.5 * ((x - mean) / sd) ** 2)


def fit_gaussian(estimates, n_bins: int | None = None) -> GaussianFit:
    """Least-squares Gaussian fit to the histogram of the estimates."""
    a = _alpha_values(estimates)
    if a.size < 100:
        raise InsufficientDataError(f"need at least 100 estimates, got {a.size}")
    if n_bins is not None and n_bins < 5:
        raise ParameterError(f"n_bins must be >= 5, got {n_bins}")
    counts, edges = histogram(a, n_bins)
    centers = 0.5 * (edges[1:] + edges[:-1])
    p0 = (float(counts.max()), float(a.mean()), float(a.std(ddof=1)) or float(edges[1] - edges[0]))
    try:
        popt, _ = curve_fit(_gauss, centers, counts, p0=p0, maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        resid = float(((counts - _gauss(centers, *p0)) ** 2).sum())
        raise FitError(f"Gaussian fit did not converge: {exc}", resid) from exc
    amp, mean, sd = popt
    if not (np.isfinite(popt).all() and amp > 0):
        raise FitError("Gaussian fit diverged", float(((counts - _gauss(centers, *popt)) ** 2).sum()))
    return GaussianFit(float(mean), float(abs(sd)), float(amp))


def baseline_curves(
    alpha_grid,
    source: SourceParams,
    eta_d: float,
    n1p_mean: float,
    seed: int,
    *,
    n_frames: int = 10_000,
) -> dict[str, np.ndarray]:
    """Classical reference variances over ``alpha_grid``.

    ``ideal``: perfect detection at matched probe flux.
    ``detected``: the same beam seen with efficiency ``eta_d`` (ideal / eta_d).
    ``differential``: Monte Carlo of a balanced two-detector scheme on two
    independent Poisson beams with the source's detected means.
    """
    alphas = np.atleast_1d(np.asarray(alpha_grid, dtype=float))
    ideal = snl_variance(alphas, eta_d, n1p_mean)
    ideal = np.atleast_1d(ideal)
    laser = SourceParams(mu=source.mu, eta1=source.eta1, eta2=source.eta2)
    n2_mean = laser.mu * laser.eta2
    if not n2_mean > 0:
        raise ParameterError("differential baseline needs a non-zero reference arm (eta2 > 0)")
    ref = Calibration(n1p_mean=n1p_mean, n2_mean=n2_mean, C=0.0, deltaE=0.0, sigma=1.0, n_frames_used=n_frames)
    diff = np.empty_like(alphas)
    for i, alpha in enumerate(alphas):
        batch = generate_independent_batch(
            laser, SampleParams(float(alpha)), n_frames, streams.derive_seed(seed, streams.BASELINE, i)
        )
        diff[i] = np.var(estimate_differential(batch, ref).alpha_hat, ddof=1)
    return {"ideal": ideal, "detected": ideal / eta_d, "differential": diff}


def predicted_gamma(alpha, source: SourceParams, eta_d: float, extra_var: float = 0.0):
    """Moment-based prediction of gamma for the corrected estimator.

    Covers shot noise, common-mode Gamma gain noise, and an additive
    uncorrelated variance ``extra_var`` (photons squared, per arm, e.g.
    summed camera read noise). Backgrounds are ignored. The gain noise enters
    twice: linearly, and through the product ``C N1 dN2``. The product term
    leaves a ``(g - 1)^2``-like residual that grows with ``(1 - alpha)^2``.
    Without excess noise or extra variance this reduces to
    ``eta_d / (1 - eta1 eta2 (1 - alpha))``.
    """
    a = np.asarray(alpha, dtype=float)
    mu, e = source.mu, source.excess_noise
    pair_var = mu + mu**2 * e
    p1 = source.eta1 * (1.0 - a)
    var1 = mu * p1 + (p1 * mu) ** 2 * e + extra_var
    var2 = mu * source.eta2 + (source.eta2 * mu) ** 2 * e + extra_var
    cov = p1 * source.eta2 * pair_var
    gain = (1.0 - a) * source.eta1 * source.eta2 * pair_var / var2
    residual = var1 - 2 * gain * cov + gain**2 * var2

    # Gain-only part: N1' ~ mu p1 ((1 + c) g - c g^2); add its exact variance
    # (Gamma moments) minus the linearized piece already counted above.
    c = source.eta2**2 * pair_var / var2
    var_g, cov_g_g2, var_g2 = e, 2 * e * (1 + e), (1 + e) * (4 * e + 6 * e * e)
    nonlinear = (1 + c) ** 2 * var_g - 2 * (1 + c) * c * cov_g_g2 + c**2 * var_g2 - (1 - c) ** 2 * e
    residual = residual + (mu * p1) ** 2 * nonlinear

    n1p = mu * source.eta1
    out = (1.0 - a) * eta_d * n1p / residual
    return float(out) if out.ndim == 0 else out


def advantage_crossing(alphas: Sequence[float], gammas: Sequence[float]) -> float | None:
    """Absorption where gamma first drops to 1, by linear interpolation (None if it never does)."""
    a = np.asarray(alphas, dtype=float)
    g = np.asarray(gammas, dtype=float)
    order = np.argsort(a)
    a, g = a[order], g[order]
    if g[0] <= 1:
        return float(a[0])
    for i in range(1, a.size):
        if g[i] <= 1:
            return float(a[i - 1] + (g[i - 1] - 1) * (a[i] - a[i - 1]) / (g[i - 1] - g[i]))
    return None


def write_report_csv(reports: Sequence[PerformanceReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(r.csv_row())


def read_report_csv(path) -> list[dict[str, float]]:
    """Parse a report CSV; malformed content raises with the 1-based line number."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise BatchFormatError("empty file: missing header", 1)
    if tuple(rows[0]) != CSV_COLUMNS:
        raise BatchFormatError(f"unexpected header {rows[0]!r}; expected {list(CSV_COLUMNS)!r}", 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise BatchFormatError(f"expected {len(CSV_COLUMNS)} fields, found {len(row)}", lineno)
        try:
            out.append({k: float(v) for k, v in zip(CSV_COLUMNS, row)})
        except ValueError as exc:
            raise BatchFormatError(f"bad number ({exc})", lineno) from None
    return out
