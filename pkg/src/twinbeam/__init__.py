"""Twin-beam sub-shot-noise absorption estimation.

Simulates correlated twin-beam acquisitions (source, sample, camera),
estimates absorption with direct and twin-beam corrected estimators, and
compares precision against the ideal classical shot-noise limit.
"""

from .analysis import (
    PerformanceReport,
    SeriesProtocol,
    advantage_crossing,
    baseline_curves,
    exposure_ratio,
    fit_gaussian,
    gamma_ratio,
    noise_reduction_factor,
    predicted_gamma,
    series_statistics,
    snl_variance,
)
from .estimators import (
    AbsorptionEstimate,
    Calibration,
    calibrate,
    drift_correct,
    estimate_corrected,
    estimate_differential,
    estimate_direct,
)
from .frames_io import (
    BinnedFrame,
    RoiSpec,
    capture_fraction,
    fit_beam_profile,
    grey_to_photons,
    integrate_roi,
    load_batch,
    recover_counts,
    save_batch,
)
from .model import (
    CameraParams,
    FrameBatch,
    FrameRecord,
    SampleParams,
    SourceParams,
    SpotLayout,
    generate_batch,
    generate_frame,
    generate_independent_batch,
    infer_detector_efficiency,
    loss_budget,
)

__version__ = "0.1.0"
