"""Forward statistical model of a twin-beam absorption measurement.

Each acquisition is sampled in four steps:

1. a common source gain ``g``: exactly 1 without excess noise, otherwise
   Gamma distributed with mean 1 and variance ``excess_noise``;
2. the number of generated pairs ``M ~ Poisson(mu * g)``;
3. per-pair binomial thinning. With ``p1 = eta1 * (1 - alpha)`` and
   ``p2 = eta2``, the counts ``(n11, n10, n01, n00)`` are one multinomial draw
   over ``M`` trials with cell probabilities
   ``(p1 p2, p1 (1 - p2), (1 - p1) p2, (1 - p1)(1 - p2))``;
4. ``n1 = n11 + n10 + Poisson(bg1)`` and ``n2 = n11 + n01 + Poisson(bg2)``.

Sample absorption and detection loss are both binomial thinnings and
commute. The sample is therefore folded into the arm-1 probability rather
than simulated as its own stage.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import streams
from .errors import InconsistencyError, ParameterError

DEFAULT_MU = 1e6


def _check_probability(name, value, *, open_low=False):
    if not (math.isfinite(value) and 0.0 <= value <= 1.0) or (open_low and value == 0.0):
        bounds = "(0, 1]" if open_low else "[0, 1]"
        raise ParameterError(f"{name} must lie in {bounds}, got {value!r}")


def _check_nonnegative(name, value):
    if not (math.isfinite(value) and value >= 0.0):
        raise ParameterError(f"{name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class SourceParams:
    """Twin-beam source and collection parameters.

    ``eta1``/``eta2`` are end-to-end arm efficiencies (path loss times detector
    efficiency), excluding the sample. ``excess_noise`` is the variance of the
    common multiplicative gain; 0 gives a Poisson pair number.
    """

    mu: float = DEFAULT_MU
    eta1: float = 0.62
    eta2: float = 0.62
    excess_noise: float = 0.0
    bg1: float = 0.0
    bg2: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ParameterError(f"mu must be > 0, got {self.mu!r}")
        _check_probability("eta1", self.eta1)
        _check_probability("eta2", self.eta2)
        _check_nonnegative("excess_noise", self.excess_noise)
        _check_nonnegative("bg1", self.bg1)
        _check_nonnegative("bg2", self.bg2)

    def mean_counts(self, alpha: float = 0.0) -> tuple[float, float]:
        """Expected ``(n1, n2)`` at sample absorption ``alpha``."""
        return self.mu * self.eta1 * (1.0 - alpha) + self.bg1, self.mu * self.eta2 + self.bg2


@dataclass(frozen=True)
class SampleParams:
    alpha: float = 0.0

    def __post_init__(self):
        _check_probability("alpha", self.alpha)

    @property
    def transmission(self) -> float:
        return 1.0 - self.alpha


@dataclass(frozen=True)
class CameraParams:
    """Linear CCD response: ``grey = offset_E + photons / sensitivity_S``."""

    sensitivity_S: float = 0.71
    offset_E: float = 300.0
    read_noise: float = 0.0
    quantize: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.sensitivity_S) and self.sensitivity_S > 0):
            raise ParameterError(f"sensitivity_S must be > 0, got {self.sensitivity_S!r}")
        _check_nonnegative("offset_E", self.offset_E)
        _check_nonnegative("read_noise", self.read_noise)


@dataclass(frozen=True)
class SpotLayout:
    """Where the two fibre outputs land on the binned sensor row."""

    n_pixels: int = 1024
    center1: float = 300.0
    center2: float = 700.0
    width: float = 8.0

    def __post_init__(self):
        if self.n_pixels < 16:
            raise ParameterError(f"n_pixels must be >= 16, got {self.n_pixels}")
        if not self.width > 0:
            raise ParameterError(f"width must be > 0, got {self.width!r}")
        for name in ("center1", "center2"):
            c = getattr(self, name)
            if not 0 <= c <= self.n_pixels - 1:
                raise ParameterError(f"{name}={c!r} falls outside the sensor")


@dataclass(frozen=True)
class ParamSnapshot:
    source: SourceParams
    sample: SampleParams
    camera: CameraParams | None = None
    layout: SpotLayout | None = None

    def as_flat_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for prefix in ("source", "sample", "camera", "layout"):
            part = getattr(self, prefix)
            if part is not None:
                out.update({f"{prefix}.{k}": v for k, v in asdict(part).items()})
        return out


@dataclass(frozen=True)
class FrameRecord:
    """Detected photon numbers for one acquisition.

    ``pixels`` holds the full-vertical-binned sensor row (both spots) in grey
    levels when the frame went through the camera model.
    """

    n1: float
    n2: float
    pixels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.n1 >= 0 and self.n2 >= 0):
            raise ParameterError(f"photon numbers must be non-negative, got ({self.n1}, {self.n2})")


def _readonly(a):
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FrameBatch:
    """An ordered set of acquisitions sharing one parameter snapshot.

    Counts are stored column-wise (``n1``, ``n2`` arrays) so estimators can run
    vectorized. Iterating or indexing yields :class:`FrameRecord` objects.
    """

    n1: np.ndarray
    n2: np.ndarray
    seed: int | None = None
    params_snapshot: ParamSnapshot | None = None
    pixels: np.ndarray | None = None

    def __post_init__(self):
        n1, n2 = np.asarray(self.n1), np.asarray(self.n2)
        if n1.ndim != 1 or n1.shape != n2.shape:
            raise ParameterError("n1 and n2 must be 1-D arrays of equal length")
        if n1.size and (n1.min() < 0 or n2.min() < 0):
            raise ParameterError("photon numbers must be non-negative")
        object.__setattr__(self, "n1", _readonly(n1))
        object.__setattr__(self, "n2", _readonly(n2))
        if self.pixels is not None:
            px = np.asarray(self.pixels)
            if px.ndim != 2 or px.shape[0] != n1.size:
                raise ParameterError("pixels must have shape (n_frames, n_pixels)")
            object.__setattr__(self, "pixels", _readonly(px))

    @classmethod
    def from_frames(cls, frames: Sequence[FrameRecord], seed=None, params_snapshot=None):
        frames = list(frames)
        pixels = None
        if frames and all(f.pixels is not None for f in frames):
            pixels = np.stack([f.pixels for f in frames])
        return cls(
            np.array([f.n1 for f in frames]),
            np.array([f.n2 for f in frames]),
            seed=seed,
            params_snapshot=params_snapshot,
            pixels=pixels,
        )

    def __len__(self):
        return self.n1.size

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return FrameBatch(
                self.n1[idx],
                self.n2[idx],
                seed=self.seed,
                params_snapshot=self.params_snapshot,
                pixels=None if self.pixels is None else self.pixels[idx],
            )
        px = None if self.pixels is None else self.pixels[idx]
        return FrameRecord(self.n1[idx].item(), self.n2[idx].item(), px)

    def __iter__(self) -> Iterator[FrameRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def frames(self) -> tuple[FrameRecord, ...]:
        return tuple(self)

    def __eq__(self, other):
        if not isinstance(other, FrameBatch):
            return NotImplemented
        if (self.pixels is None) != (other.pixels is None):
            return False
        return (
            self.seed == other.seed
            and self.params_snapshot == other.params_snapshot
            and np.array_equal(self.n1, other.n1)
            and np.array_equal(self.n2, other.n2)
            and (self.pixels is None or np.array_equal(self.pixels, other.pixels))
        )

    __hash__ = None

    def split(self, n_parts: int) -> list[FrameBatch]:
        """Split into ``n_parts`` consecutive equal-length sub-batches."""
        if n_parts < 1 or len(self) % n_parts:
            raise ParameterError(f"cannot split {len(self)} frames into {n_parts} equal parts")
        step = len(self) // n_parts
        return [self[i * step:(i + 1) * step] for i in range(n_parts)]

    def with_counts(self, n1, n2) -> FrameBatch:
        return FrameBatch(n1, n2, seed=self.seed, params_snapshot=self.params_snapshot, pixels=self.pixels)


def _sample_gain(source, rng, size):
    if source.excess_noise == 0:
        return np.ones(size)
    shape = 1.0 / source.excess_noise
    return rng.gamma(shape, source.excess_noise, size=size)


def _add_background(n1, n2, source, rng):
    size = n1.shape
    if source.bg1 > 0:
        n1 = n1 + rng.poisson(source.bg1, size=size)
    if source.bg2 > 0:
        n2 = n2 + rng.poisson(source.bg2, size=size)
    return n1, n2


def _sample_counts(source: SourceParams, sample: SampleParams, rng, size: int):
    pairs = rng.poisson(source.mu * _sample_gain(source, rng, size))
    p1 = source.eta1 * (1.0 - sample.alpha)
    p2 = source.eta2
    cells = [p1 * p2, p1 * (1.0 - p2), (1.0 - p1) * p2, (1.0 - p1) * (1.0 - p2)]
    counts = rng.multinomial(pairs, cells)
    n1 = counts[:, 0] + counts[:, 1]
    n2 = counts[:, 0] + counts[:, 2]
    return _add_background(n1, n2, source, rng)


def _sample_independent(source, sample, rng, size):
    gain = _sample_gain(source, rng, size)
    n1 = rng.poisson(source.mu * gain * source.eta1 * (1.0 - sample.alpha))
    n2 = rng.poisson(source.mu * gain * source.eta2)
    return _add_background(n1, n2, source, rng)


def generate_frame(source: SourceParams, sample: SampleParams, rng: np.random.Generator) -> FrameRecord:
    """Draw one acquisition from ``rng``."""
    n1, n2 = _sample_counts(source, sample, rng, 1)
    return FrameRecord(int(n1[0]), int(n2[0]))


def _run_blocks(sampler, source, sample, n_frames, seed, domain, workers):
    def one(block):
        i, start, stop = block
        return sampler(source, sample, streams.stream(seed, domain, i), stop - start)

    chunks = list(streams.blocks(n_frames))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def generate_batch(
    source: SourceParams,
    sample: SampleParams,
    camera: CameraParams | None = None,
    n_frames: int = 1000,
    seed: int = 0,
    *,
    layout: SpotLayout | None = None,
    workers: int = 1,
) -> FrameBatch:
    """Generate ``n_frames`` independent acquisitions.

    Frames are produced in fixed blocks of :data:`streams.BLOCK_SIZE`, each on
    its own derived stream, so output is identical for any ``workers``. With a
    ``camera``, a binned sensor row with two Gaussian spots is synthesized per
    frame (see :func:`twinbeam.frames_io.render_batch`); the stored counts
    are then the injected truth, and the measured counts are recovered with
    :func:`twinbeam.frames_io.recover_counts`.
    """
    if int(n_frames) < 1:
        raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
    n1, n2 = _run_blocks(_sample_counts, source, sample, int(n_frames), seed, streams.BATCH, workers)
    if camera is None:
        return FrameBatch(n1, n2, seed=seed, params_snapshot=ParamSnapshot(source, sample))

    from .frames_io import render_batch

    layout = layout or SpotLayout()
    pixels = render_batch(n1, n2, camera, layout, seed=seed)
    snapshot = ParamSnapshot(source, sample, camera, layout)
    return FrameBatch(n1, n2, seed=seed, params_snapshot=snapshot, pixels=pixels)


def generate_independent_batch(
    source: SourceParams, sample: SampleParams, n_frames: int = 1000, seed: int = 0, *, workers: int = 1
) -> FrameBatch:
    """Same pipeline with the multinomial step replaced by independent Poisson arms.

    Marginal means match :func:`generate_batch`; without excess noise the arms
    are uncorrelated, as for a laser split on a beamsplitter.
    """
    if int(n_frames) < 1:
        raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
    n1, n2 = _run_blocks(_sample_independent, source, sample, int(n_frames), seed, streams.INDEPENDENT, workers)
    return FrameBatch(n1, n2, seed=seed, params_snapshot=ParamSnapshot(source, sample))


def loss_budget(factors: Sequence[float] = ()) -> float:
    """Overall efficiency of a chain of independent loss elements."""
    total = 1.0
    for f in factors:
        _check_probability("efficiency factor", float(f))
        total *= float(f)
    return total


def infer_detector_efficiency(heralding_dut: float, heralding_ref: float, eta_ref: float) -> float:
    """Efficiency of a detector under test from a heralding comparison.

    Both detectors see the same optical path, so heralding efficiencies scale
    with detector efficiency: ``eta_dut = eta_ref * h_dut / h_ref``.
    """
    _check_probability("heralding_dut", heralding_dut, open_low=True)
    _check_probability("heralding_ref", heralding_ref, open_low=True)
    _check_probability("eta_ref", eta_ref, open_low=True)
    eta = eta_ref * heralding_dut / heralding_ref
    if eta > 1.0:
        raise InconsistencyError(
            f"inferred efficiency {eta:.4g} > 1: heralding {heralding_dut} vs {heralding_ref} "
            f"is incompatible with a reference efficiency of {eta_ref}"
        )
    return eta
