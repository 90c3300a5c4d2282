"""Run configuration: a line-oriented ``dotted.key = value`` text format.

Blank lines and ``#`` comments are ignored. Unknown, duplicated, or
ill-typed keys are rejected with the key name. A config file must set the
source keys listed in :data:`REQUIRED_KEYS`; everything else defaults to the
nominal operating point below.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .analysis import SeriesProtocol
from .errors import ConfigError, ParameterError
from .model import CameraParams, SourceParams, SpotLayout

DEFAULT_ALPHAS = (5.99e-3, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
REQUIRED_KEYS = ("source.mu", "source.eta1", "source.eta2")


@dataclass(frozen=True)
class RunConfig:
    source: SourceParams = field(default_factory=SourceParams)
    camera: CameraParams = field(default_factory=CameraParams)
    camera_enabled: bool = False
    layout: SpotLayout = field(default_factory=SpotLayout)
    alpha_list: tuple[float, ...] = DEFAULT_ALPHAS
    protocol: SeriesProtocol = field(default_factory=SeriesProtocol)
    eta_d: float = 0.90
    eta_d_uncertainty: float = 0.0
    seed: int = 20170101
    output_dir: str = "out"
    calibration_frames: int = 10_000
    baseline_frames: int = 10_000
    roi_half_width_sd: float = 2.5
    capture_correction: bool = True
    report_k_sigma: float = 3.0


def _bool(text):
    low = text.lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean (true/false), got {text!r}")


def _int(text):
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {text!r}") from None
        return int(value)


def _alpha_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("alpha_list must not be empty")
    return tuple(float(t) for t in items)


# key -> (parser, (section, attribute))
_KEYS = {
    "source.mu": (float, ("source", "mu")),
    "source.eta1": (float, ("source", "eta1")),
    "source.eta2": (float, ("source", "eta2")),
    "source.excess_noise": (float, ("source", "excess_noise")),
    "source.bg1": (float, ("source", "bg1")),
    "source.bg2": (float, ("source", "bg2")),
    "camera.S": (float, ("camera", "sensitivity_S")),
    "camera.E_off": (float, ("camera", "offset_E")),
    "camera.read_noise": (float, ("camera", "read_noise")),
    "camera.quantize": (_bool, ("camera", "quantize")),
    "camera.enabled": (_bool, (None, "camera_enabled")),
    "camera.pixels": (_int, ("layout", "n_pixels")),
    "camera.spot1_center": (float, ("layout", "center1")),
    "camera.spot2_center": (float, ("layout", "center2")),
    "camera.spot_width": (float, ("layout", "width")),
    "sample.alpha_list": (_alpha_list, (None, "alpha_list")),
    "protocol.n_series": (_int, ("protocol", "n_series")),
    "protocol.frames_per_series": (_int, ("protocol", "frames_per_series")),
    "eta_d": (float, (None, "eta_d")),
    "eta_d_uncertainty": (float, (None, "eta_d_uncertainty")),
    "seed": (_int, (None, "seed")),
    "output.dir": (str, (None, "output_dir")),
    "calibration.n_frames": (_int, (None, "calibration_frames")),
    "baseline.n_frames": (_int, (None, "baseline_frames")),
    "roi.half_width_sd": (float, (None, "roi_half_width_sd")),
    "roi.capture_correction": (_bool, (None, "capture_correction")),
    "report.k_sigma": (float, (None, "report_k_sigma")),
}


def parse_config(text: str, *, require: tuple[str, ...] = REQUIRED_KEYS) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", f"line {lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(key, f"line {lineno}: unknown key")
        if key in values:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        try:
            values[key] = _KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(key, f"line {lineno}: {exc}") from None
    for key in require:
        if key not in values:
            raise ConfigError(key, "missing required key")
    return build_config(values)


def build_config(values: dict[str, object], base: RunConfig | None = None) -> RunConfig:
    """Apply ``{dotted key: parsed value}`` overrides to ``base`` (defaults if None)."""
    cfg = base or RunConfig()
    sections: dict[str, dict[str, object]] = {}
    top: dict[str, object] = {}
    owner: dict[tuple[str, str], str] = {}
    for key, value in values.items():
        section, attr = _KEYS[key][1]
        owner[(section, attr)] = key
        (sections.setdefault(section, {}) if section else top)[attr] = value

    updates: dict[str, object] = {}
    for section, attrs in sections.items():
        try:
            updates[section] = replace(getattr(cfg, section), **attrs)
        except ParameterError as exc:
            msg = str(exc)
            attr = next((a for a in attrs if msg.startswith(a)), next(iter(attrs)))
            raise ConfigError(owner[(section, attr)], msg) from None
    cfg = replace(cfg, **updates, **top)
    _validate_top(cfg)
    return cfg


_TOP_KEYS = {attr: key for key, (_, (section, attr)) in _KEYS.items() if section is None}


def _validate_top(cfg: RunConfig) -> None:
    key = _TOP_KEYS.__getitem__

    for a in cfg.alpha_list:
        if not 0.0 <= a <= 1.0:
            raise ConfigError(key("alpha_list"), f"alpha {a!r} outside [0, 1]")
    if not cfg.alpha_list:
        raise ConfigError(key("alpha_list"), "must not be empty")
    if not 0.0 < cfg.eta_d <= 1.0:
        raise ConfigError(key("eta_d"), f"must lie in (0, 1], got {cfg.eta_d!r}")
    if not 0.0 <= cfg.eta_d_uncertainty < 1.0:
        raise ConfigError(key("eta_d_uncertainty"), f"must lie in [0, 1), got {cfg.eta_d_uncertainty!r}")
    if cfg.seed < 0:
        raise ConfigError(key("seed"), f"must be >= 0, got {cfg.seed}")
    if cfg.calibration_frames < 2:
        raise ConfigError(key("calibration_frames"), f"must be >= 2, got {cfg.calibration_frames}")
    if cfg.baseline_frames < 2:
        raise ConfigError(key("baseline_frames"), f"must be >= 2, got {cfg.baseline_frames}")
    if not cfg.roi_half_width_sd > 0:
        raise ConfigError(key("roi_half_width_sd"), f"must be > 0, got {cfg.roi_half_width_sd!r}")
    if not cfg.report_k_sigma >= 0:
        raise ConfigError(key("report_k_sigma"), f"must be >= 0, got {cfg.report_k_sigma!r}")
    if not cfg.output_dir:
        raise ConfigError(key("output_dir"), "must not be empty")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
