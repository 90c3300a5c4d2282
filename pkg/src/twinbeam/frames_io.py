"""CCD frame synthesis, beam ROI extraction, and batch persistence.

The camera sees both fibre outputs on a single full-vertical-binned row.
Grey levels relate to detected photons through ``N = S * (E - E_off)``.
Each beam is integrated over a window spanning a fixed number of fitted
standard deviations around its centre.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import ndtr

from . import streams
from .errors import BatchFormatError, BoundsError, DetectionError, FitError, ParameterError, RoiConfigurationError, VersionError
from .model import CameraParams, FrameBatch, ParamSnapshot, SampleParams, SourceParams, SpotLayout

FORMAT_MAGIC = "twinbeam-batch"
FORMAT_VERSION = 1
DEFAULT_HALF_WIDTH_SD = 2.5


@dataclass(frozen=True, eq=False)
class BinnedFrame:
    pixels: np.ndarray
    exposure_s: float = 0.5

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 1 or px.size < 16:
            raise ParameterError(f"a binned frame needs at least 16 pixels, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class RoiSpec:
    center_px: float
    width_px: float
    lo_px: int
    hi_px: int

    def __post_init__(self):
        if not self.width_px > 0:
            raise ParameterError(f"ROI width must be > 0, got {self.width_px}")
        if self.lo_px > self.hi_px:
            raise ParameterError(f"empty ROI [{self.lo_px}, {self.hi_px}]")

    @classmethod
    def around(cls, center, width, half_width_sd=DEFAULT_HALF_WIDTH_SD, n_pixels=None):
        lo = math.floor(center - half_width_sd * width)
        hi = math.ceil(center + half_width_sd * width)
        if n_pixels is not None:
            lo, hi = max(lo, 0), min(hi, n_pixels - 1)
        return cls(float(center), float(width), int(lo), int(hi))

    @property
    def n_pixels(self) -> int:
        return self.hi_px - self.lo_px + 1


def grey_to_photons(E_s, E_off, S):
    """Photon number from grey levels. Not clamped; noisy pixels may go negative."""
    if not S > 0:
        raise ParameterError(f"sensitivity S must be > 0, got {S!r}")
    out = S * (np.asarray(E_s, dtype=float) - E_off)
    return float(out) if out.ndim == 0 else out


def spot_profile(n_pixels: int, center: float, width: float) -> np.ndarray:
    """Pixel-integrated Gaussian, normalized to sum to 1 over the sensor."""
    edges = np.arange(n_pixels + 1) - 0.5
    w = np.diff(ndtr((edges - center) / width))
    return w / w.sum()


def to_grey_levels(photons, camera: CameraParams, rng: np.random.Generator | None = None):
    """Apply the camera response to per-pixel photon numbers.

    Read noise is Gaussian per pixel (sd in grey levels); quantization rounds
    half-to-even after the noise is added.
    """
    grey = camera.offset_E + np.asarray(photons, dtype=float) / camera.sensitivity_S
    if camera.read_noise > 0:
        if rng is None:
            raise ParameterError("read_noise > 0 requires an rng")
        grey = grey + rng.normal(0.0, camera.read_noise, size=grey.shape)
    if camera.quantize:
        grey = np.rint(grey)
    return grey


def render_batch(n1, n2, camera: CameraParams, layout: SpotLayout, seed: int = 0) -> np.ndarray:
    """Binned sensor rows (grey levels), one per frame, holding both spots."""
    w1 = spot_profile(layout.n_pixels, layout.center1, layout.width)
    w2 = spot_profile(layout.n_pixels, layout.center2, layout.width)
    n1, n2 = np.asarray(n1, dtype=float), np.asarray(n2, dtype=float)
    out = np.empty((n1.size, layout.n_pixels))
    for i, start, stop in streams.blocks(n1.size):
        photons = n1[start:stop, None] * w1 + n2[start:stop, None] * w2
        out[start:stop] = to_grey_levels(photons, camera, streams.stream(seed, streams.CAMERA, i))
    return out


def _binned_gauss(x, base, total, center, sd):
    # Gaussian integrated over each pixel [x - 1/2, x + 1/2]
    return base + total * (ndtr((x + 0.5 - center) / sd) - ndtr((x - 0.5 - center) / sd))


def _peak_extent(y, peak, base, floor):
    """Pixels belonging to the peak: walk downhill until the threshold or a valley."""
    def walk(step):
        j = peak
        while 0 <= j + step < y.size:
            nxt = y[j + step]
            if nxt <= base + floor:
                return j, False
            if nxt > y[j] + floor:  # rising again: a neighbouring spot
                return j, True
            j += step
        return j, False

    lo, lo_valley = walk(-1)
    hi, hi_valley = walk(1)
    return lo, hi, lo_valley, hi_valley


def _fit_peak(x, y, peak, base, floor):
    lo, hi, lo_valley, hi_valley = _peak_extent(y, peak, base, floor)
    seg = np.clip(y[lo:hi + 1] - base, 0, None)
    xs = x[lo:hi + 1]
    c0 = float((xs * seg).sum() / seg.sum())
    s0 = float(np.sqrt(max(((xs - c0) ** 2 * seg).sum() / seg.sum(), 0.25)))
    # Pad with background pixels unless the extent ended at a valley.
    pad = int(math.ceil(2 * s0)) + 2
    a = lo if lo_valley else max(lo - pad, 0)
    b = hi if hi_valley else min(hi + pad, y.size - 1)
    xw, yw = x[a:b + 1], y[a:b + 1]
    p0 = (base, float(seg.sum()), c0, s0)
    try:
        popt, _ = curve_fit(_binned_gauss, xw, yw, p0=p0, maxfev=5000)
    except (RuntimeError, ValueError) as exc:
        resid = float(((yw - _binned_gauss(xw, *p0)) ** 2).sum())
        raise FitError(f"beam profile fit near pixel {peak} failed: {exc}", resid) from exc
    _, total, center, sd = popt
    if not (total > 0 and np.isfinite(center) and 0 <= center <= y.size - 1):
        resid = float(((yw - _binned_gauss(xw, *popt)) ** 2).sum())
        raise FitError(f"beam profile fit near pixel {peak} diverged", resid)
    return float(center), float(abs(sd)), a, b


def fit_beam_profile(frame, half_width_sd: float = DEFAULT_HALF_WIDTH_SD, max_beams: int = 2) -> list[RoiSpec]:
    """Locate up to ``max_beams`` Gaussian spots and return their ROIs, sorted by position.

    A peak counts as a beam when it rises more than five noise-floor units
    above the median level. The noise floor is the MAD-based standard
    deviation, with a tiny relative floor so that noiseless synthetic frames
    still work. Each spot is fitted as a pixel-integrated Gaussian over its
    own extent, which ends at the threshold or at the valley next to a
    neighbouring spot.
    """
    y = np.asarray(frame.pixels if isinstance(frame, BinnedFrame) else frame, dtype=float)
    x = np.arange(y.size, dtype=float)
    base = float(np.median(y))
    noise = 1.4826 * float(np.median(np.abs(y - base)))
    floor = 5 * max(noise, 1e-6 * float(y.max() - base))
    work = y.copy()
    rois = []
    for _ in range(max_beams):
        peak = int(np.argmax(work))
        if not work[peak] - base > floor:
            break
        center, sd, a, b = _fit_peak(x, y, peak, base, floor)
        rois.append(RoiSpec.around(center, sd, half_width_sd, y.size))
        work[a:b + 1] = -np.inf
    if not rois:
        raise DetectionError("no beam found above 5x the background noise floor")
    rois.sort(key=lambda r: r.center_px)
    for left, right in zip(rois, rois[1:]):
        if left.hi_px >= right.lo_px:
            raise RoiConfigurationError(
                f"ROIs [{left.lo_px}, {left.hi_px}] and [{right.lo_px}, {right.hi_px}] overlap; beams too close"
            )
    return rois


def integrate_roi(frame, roi: RoiSpec, camera: CameraParams) -> float:
    """Photon number summed over the ROI pixels."""
    y = np.asarray(frame.pixels if isinstance(frame, BinnedFrame) else frame, dtype=float)
    if roi.lo_px < 0 or roi.hi_px >= y.shape[-1]:
        raise BoundsError(f"ROI [{roi.lo_px}, {roi.hi_px}] outside frame of {y.shape[-1]} pixels")
    seg = y[..., roi.lo_px:roi.hi_px + 1]
    return grey_to_photons(seg, camera.offset_E, camera.sensitivity_S).sum(axis=-1)


def capture_fraction(roi: RoiSpec) -> float:
    """Fraction of a Gaussian spot (the fitted one) falling inside the ROI pixels."""
    hi = ndtr((roi.hi_px + 0.5 - roi.center_px) / roi.width_px)
    lo = ndtr((roi.lo_px - 0.5 - roi.center_px) / roi.width_px)
    return float(hi - lo)


def fit_batch_rois(batch: FrameBatch, half_width_sd: float = DEFAULT_HALF_WIDTH_SD) -> tuple[RoiSpec, RoiSpec]:
    """Fit the two beam ROIs on the batch-averaged frame, ordered as (arm 1, arm 2)."""
    if batch.pixels is None:
        raise ParameterError("batch has no pixel data")
    rois = fit_beam_profile(batch.pixels.mean(axis=0), half_width_sd)
    if len(rois) != 2:
        raise DetectionError(f"expected two beams, found {len(rois)}")
    layout = batch.params_snapshot.layout if batch.params_snapshot else None
    if layout is not None and layout.center1 > layout.center2:
        rois.reverse()
    return rois[0], rois[1]


def recover_counts(
    batch: FrameBatch,
    camera: CameraParams | None = None,
    rois: tuple[RoiSpec, RoiSpec] | None = None,
    *,
    capture_correction: bool = True,
    half_width_sd: float = DEFAULT_HALF_WIDTH_SD,
) -> FrameBatch:
    """Replace a camera batch's counts with ROI-integrated photon numbers.

    With ``capture_correction`` each arm is divided by its ROI capture
    fraction, so counts are on the same scale as the counts-only model.
    """
    if camera is None:
        if batch.params_snapshot is None or batch.params_snapshot.camera is None:
            raise ParameterError("camera parameters required to convert grey levels")
        camera = batch.params_snapshot.camera
    if rois is None:
        rois = fit_batch_rois(batch, half_width_sd)
    counts = []
    for roi in rois:
        n = integrate_roi(batch.pixels, roi, camera)
        if capture_correction:
            n = n / capture_fraction(roi)
        counts.append(n)
    return batch.with_counts(*counts)


# -- persistence ----------------------------------------------------------

_SNAPSHOT_TYPES = {"source": SourceParams, "sample": SampleParams, "camera": CameraParams, "layout": SpotLayout}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_value(kind, text):
    if kind is bool or kind == "bool":
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    if kind is int or kind == "int":
        return int(text)
    return float(text)


def save_batch(batch: FrameBatch, path) -> None:
    """Write ``batch`` as a versioned UTF-8 text file with LF line endings."""
    integral = np.issubdtype(batch.n1.dtype, np.integer) and np.issubdtype(batch.n2.dtype, np.integer)
    n_pixels = 0 if batch.pixels is None else batch.pixels.shape[1]
    lines = [
        FORMAT_MAGIC,
        f"format_version={FORMAT_VERSION}",
        f"n_frames={len(batch)}",
        f"seed={'none' if batch.seed is None else int(batch.seed)}",
        f"counts_dtype={'int' if integral else 'float'}",
        f"n_pixels={n_pixels}",
    ]
    if batch.params_snapshot is not None:
        lines += [f"{k}={_fmt(v)}" for k, v in batch.params_snapshot.as_flat_dict().items()]
    lines += ["[frames]", "n1,n2"]
    cast = (lambda v: str(int(v))) if integral else (lambda v: repr(float(v)))
    lines += [f"{cast(a)},{cast(b)}" for a, b in zip(batch.n1, batch.n2)]
    if n_pixels:
        lines.append("[pixels]")
        lines += [",".join(repr(float(v)) for v in row) for row in batch.pixels]
    lines.append("[end]")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _read_rows(lines, start, n_rows, section, width, conv):
    rows = []
    for j in range(n_rows):
        i = start + j
        if i >= len(lines) or lines[i].startswith("["):
            raise BatchFormatError(f"section {section} truncated: expected {n_rows} rows, found {j}", i + 1)
        parts = lines[i].split(",")
        if len(parts) != width:
            raise BatchFormatError(f"section {section}: expected {width} fields, found {len(parts)}", i + 1)
        try:
            rows.append([conv(p) for p in parts])
        except ValueError as exc:
            raise BatchFormatError(f"section {section}: bad value ({exc})", i + 1) from None
    return rows, start + n_rows


def _expect_section(lines, i, name):
    if i >= len(lines):
        raise BatchFormatError(f"missing section {name} (file truncated)", i + 1)
    if lines[i] != name:
        raise BatchFormatError(f"expected section {name}, found {lines[i]!r}", i + 1)
    return i + 1


def load_batch(path) -> FrameBatch:
    """Read a batch written by :func:`save_batch`; any defect raises before data is returned."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != FORMAT_MAGIC:
        raise BatchFormatError(f"not a batch file (expected {FORMAT_MAGIC!r} on the first line)", 1)
    header: dict[str, tuple[str, int]] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("["):
        key, sep, value = lines[i].partition("=")
        if not sep:
            raise BatchFormatError(f"expected key=value, found {lines[i]!r}", i + 1)
        if key == "format_version" and value != str(FORMAT_VERSION):
            raise VersionError(f"unsupported batch format version {value!r} (this reader handles {FORMAT_VERSION})", i + 1)
        header[key] = (value, i + 1)
        i += 1
    for key in ("format_version", "n_frames", "seed", "counts_dtype", "n_pixels"):
        if key not in header:
            raise BatchFormatError(f"header is missing required key {key!r}", i + 1)

    def hval(key, kind):
        value, line = header[key]
        try:
            return _parse_value(kind, value)
        except ValueError as exc:
            raise BatchFormatError(f"header key {key!r}: {exc}", line) from None

    n_frames = hval("n_frames", int)
    n_pixels = hval("n_pixels", int)
    seed = None if header["seed"][0] == "none" else hval("seed", int)
    dtype = header["counts_dtype"][0]
    if dtype not in ("int", "float"):
        raise BatchFormatError(f"counts_dtype must be int or float, got {dtype!r}", header["counts_dtype"][1])

    parts: dict[str, dict] = {}
    for key, (value, line) in header.items():
        prefix, _, name = key.partition(".")
        if prefix not in _SNAPSHOT_TYPES:
            continue
        types = {f.name: f.type for f in dataclasses.fields(_SNAPSHOT_TYPES[prefix])}
        if name not in types:
            raise BatchFormatError(f"unknown parameter {key!r}", line)
        try:
            parts.setdefault(prefix, {})[name] = _parse_value(types[name], value)
        except ValueError as exc:
            raise BatchFormatError(f"header key {key!r}: {exc}", line) from None
    snapshot = None
    if parts:
        if "source" not in parts or "sample" not in parts:
            raise BatchFormatError("parameter snapshot needs both source.* and sample.* keys", i + 1)
        try:
            snapshot = ParamSnapshot(**{p: _SNAPSHOT_TYPES[p](**kw) for p, kw in parts.items()})
        except (TypeError, ParameterError) as exc:
            raise BatchFormatError(f"invalid parameter snapshot: {exc}", i + 1) from None

    i = _expect_section(lines, i, "[frames]")
    if i >= len(lines) or lines[i] != "n1,n2":
        raise BatchFormatError("section [frames] must start with the column line 'n1,n2'", i + 1)
    conv = int if dtype == "int" else float
    rows, i = _read_rows(lines, i + 1, n_frames, "[frames]", 2, conv)
    pixels = None
    if n_pixels:
        i = _expect_section(lines, i, "[pixels]")
        px_rows, i = _read_rows(lines, i, n_frames, "[pixels]", n_pixels, float)
        pixels = np.array(px_rows, dtype=float)
    i = _expect_section(lines, i, "[end]")
    if i != len(lines):
        raise BatchFormatError("unexpected content after [end]", i + 1)
    counts = np.array(rows, dtype=np.int64 if dtype == "int" else float).reshape(n_frames, 2)
    return FrameBatch(counts[:, 0], counts[:, 1], seed=seed, params_snapshot=snapshot, pixels=pixels)
