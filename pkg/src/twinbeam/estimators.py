"""Absorption estimators and the sample-free calibration they rely on.

Direct estimate from arm 1 alone::

    alpha = 1 - N1 / <N1p>

Twin-beam corrected estimate, where the fluctuation of the reference arm is
used to cancel the correlated part of the probe fluctuation::

    alpha = 1 - (N1 - k dN2 + dE) / <N1p>,    k = C N1,  dN2 = N2 - <N2>

``C`` is fixed at calibration as ``Cov(N1, N2) / (<N1> Var(N2))``. Then
``k = C N1`` is the least-squares gain, and because it scales with the
transmitted intensity it stays optimal at every absorption. ``E[k dN2]``
equals ``C Cov(N1, N2)``, which is proportional to the transmission. The bias
term therefore scales as ``dE = deltaE * N1 / <N1p>`` with
``deltaE = C Cov_cal(N1, N2)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import BatchFormatError, DegenerateCalibrationError, InsufficientDataError, ParameterError
from .model import FrameBatch, FrameRecord

EstimatorKind = Literal["direct", "corrected", "differential"]
ESTIMATOR_KINDS = ("direct", "corrected", "differential")
MIN_CALIBRATION_FRAMES = 100


@dataclass(frozen=True)
class Calibration:
    """Reference statistics recorded without a sample."""

    n1p_mean: float
    n2_mean: float
    C: float
    deltaE: float
    sigma: float
    n_frames_used: int
    seed: int | None = None

    def __post_init__(self):
        if not self.n1p_mean > 0:
            raise ParameterError(f"n1p_mean must be > 0, got {self.n1p_mean}")
        if not self.n2_mean > 0:
            raise ParameterError(f"n2_mean must be > 0, got {self.n2_mean}")
        if not self.sigma >= 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.n_frames_used < 2:
            raise ParameterError(f"n_frames_used must be >= 2, got {self.n_frames_used}")

    @property
    def calibration_id(self) -> str:
        return hashlib.sha1(self.to_text().encode("utf-8")).hexdigest()[:12]

    def to_text(self) -> str:
        """Flat ``key=value`` block, one key per line."""
        seed = "none" if self.seed is None else str(int(self.seed))
        return (
            f"n1p_mean={self.n1p_mean!r}\n"
            f"n2_mean={self.n2_mean!r}\n"
            f"C={self.C!r}\n"
            f"deltaE={self.deltaE!r}\n"
            f"sigma={self.sigma!r}\n"
            f"n_frames_used={int(self.n_frames_used)}\n"
            f"seed={seed}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> Calibration:
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise BatchFormatError(f"expected key=value, found {line!r}", lineno)
            values[key.strip()] = value.strip()
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values:
                if f.name == "seed":
                    continue
                raise BatchFormatError(f"calibration is missing key {f.name!r}")
            raw = values[f.name]
            try:
                if f.name == "seed":
                    kwargs[f.name] = None if raw == "none" else int(raw)
                elif f.name == "n_frames_used":
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
            except ValueError:
                raise BatchFormatError(f"calibration key {f.name!r}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> Calibration:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class AbsorptionEstimate:
    """Absorption estimate(s); ``alpha_hat`` is a float or an array over frames.

    Values are not clamped to [0, 1]; ``out_of_range`` flags the ones outside.
    """

    alpha_hat: float | np.ndarray
    estimator_kind: EstimatorKind
    calibration_id: str

    def __post_init__(self):
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ParameterError(f"unknown estimator kind {self.estimator_kind!r}")

    def __len__(self):
        return np.size(self.alpha_hat)

    @property
    def out_of_range(self):
        """True where the raw estimate lies outside [0, 1]."""
        a = np.asarray(self.alpha_hat)
        out = (a < 0) | (a > 1)
        return bool(out) if out.ndim == 0 else out


def _counts(frame):
    if isinstance(frame, (FrameRecord, FrameBatch)):
        return frame.n1, frame.n2
    n1, n2 = frame
    return n1, n2


def _wrap(values, kind, calib):
    if np.ndim(values) == 0:
        values = float(values)
    return AbsorptionEstimate(values, kind, calib.calibration_id)


def calibrate(batch_no_sample: FrameBatch) -> Calibration:
    """Reference statistics from a sample-free batch."""
    snap = batch_no_sample.params_snapshot
    if snap is not None and snap.sample.alpha != 0:
        raise ParameterError(f"calibration batch was taken with a sample (alpha={snap.sample.alpha})")
    n = len(batch_no_sample)
    if n < 2:
        raise InsufficientDataError(f"calibration needs at least 2 frames, got {n}")
    if n < MIN_CALIBRATION_FRAMES:
        warnings.warn(f"calibrating from only {n} frames; at least {MIN_CALIBRATION_FRAMES} recommended", stacklevel=2)
    n1 = np.asarray(batch_no_sample.n1, dtype=float)
    n2 = np.asarray(batch_no_sample.n2, dtype=float)
    m1, m2 = n1.mean(), n2.mean()
    cov = np.cov(n1, n2)  # unbiased (n - 1)
    var2, cov12 = cov[1, 1], cov[0, 1]
    if var2 == 0:
        raise DegenerateCalibrationError("arm-2 counts do not fluctuate; gain constant undefined")
    if m1 <= 0 or m2 <= 0:
        raise DegenerateCalibrationError("calibration batch has zero mean counts")
    C = cov12 / (m1 * var2)
    sigma = np.var(n1 - n2, ddof=1) / (m1 + m2)
    return Calibration(
        n1p_mean=float(m1),
        n2_mean=float(m2),
        C=float(C),
        deltaE=float(C * cov12),
        sigma=float(sigma),
        n_frames_used=n,
        seed=batch_no_sample.seed,
    )


def estimate_direct(frame, calib: Calibration) -> AbsorptionEstimate:
    """Single-beam estimate from arm 1 against the sample-free mean."""
    n1, _ = _counts(frame)
    return _wrap(1.0 - np.asarray(n1, dtype=float) / calib.n1p_mean, "direct", calib)


def estimate_corrected(frame, calib: Calibration, *, gain_scale: float = 1.0) -> AbsorptionEstimate:
    """Twin-beam corrected estimate.

    ``gain_scale`` multiplies ``C`` (and the matching bias term); it exists to
    probe the optimality of the calibrated gain and defaults to 1.
    """
    n1, n2 = _counts(frame)
    n1 = np.asarray(n1, dtype=float)
    C = calib.C * gain_scale
    k = C * n1
    delta_e = calib.deltaE * gain_scale * n1 / calib.n1p_mean
    corrected = n1 - k * (np.asarray(n2, dtype=float) - calib.n2_mean) + delta_e
    return _wrap(1.0 - corrected / calib.n1p_mean, "corrected", calib)


def estimate_differential(frame, calib: Calibration) -> AbsorptionEstimate:
    """Balanced differential estimate (unit gain, no bias term).

    This is the classical two-detector reference scheme: the reference-arm
    fluctuation is subtracted one-for-one.
    """
    n1, n2 = _counts(frame)
    corrected = np.asarray(n1, dtype=float) - (np.asarray(n2, dtype=float) - calib.n2_mean)
    return _wrap(1.0 - corrected / calib.n1p_mean, "differential", calib)


def drift_correct(calib: Calibration, n2_series_mean: float) -> Calibration:
    """Rescale the sample-free arm-1 mean to the source power seen in a series.

    Source-power drift scales both arms by the same factor, so the arm-2 mean
    of the series tracks the arm-1 mean that would be seen without the sample.
    """
    if not n2_series_mean > 0:
        raise ParameterError(f"series arm-2 mean must be > 0, got {n2_series_mean}")
    ratio = n2_series_mean / calib.n2_mean
    return dataclasses.replace(calib, n1p_mean=calib.n1p_mean * ratio, n2_mean=float(n2_series_mean))
