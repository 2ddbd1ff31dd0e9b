"""Configuration dataclasses and the flat ``key = value`` config file format.

Config files are plain text, one assignment per line, ``#`` comments.
Nested fields use dotted keys, e.g. ``detector.max_features = 1350``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class DetectorConfig:
    # border_left = 0 means "same as border".  Stereo pipelines can raise it
    # by the disparity search range so every feature tracked into the right
    # view keeps full descriptor support there as well.
    border: int = 16
    border_left: int = 0
    nms_radius: int = 4
    max_features: int = 1350
    response_min: float = 1e-8
    default_size: float = 7.0
    harris_k: float = 0.04
    window_sigma: float = 1.0


@dataclass
class ScaleConfig:
    """Depth-driven size normalization; ``enabled`` is the scale-estimation flag."""

    enabled: bool = True
    metric_radius: float = 0.5
    r_min: float = 8.0
    r_max: float = 64.0

    def __post_init__(self) -> None:
        if not (0 < self.r_min <= self.r_max):
            raise ValueError(f"need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}")
        if not self.metric_radius > 0:
            raise ValueError("metric_radius must be positive")


@dataclass
class StereoTrackConfig:
    patch_radius: int = 5
    d_max: int = 64
    row_search: int = 1          # vertical search band, +/- rows
    epipolar_tol: float = 2.0
    zncc_min: float = 0.8
    lr_consistency_tol: float = 1.0


@dataclass
class MatchConfig:
    # abs_threshold <= 0 means auto: 0.25 * nbits for binary,
    # 0.7 * sqrt(sections) for float descriptors.
    abs_threshold: float = 0.0
    ratio_binary: float = 0.9
    ratio_float: float = 0.8


@dataclass
class RansacConfig:
    max_iters: int = 1000
    confidence: float = 0.99
    reproj_tol: float = 2.0
    min_inliers: int = 8
    gn_iters: int = 10
    gn_tol: float = 1e-9


@dataclass
class PipelineConfig:
    """Everything needed to run the odometry pipeline on one sequence."""

    backend: str = "retina"          # retina | gradhist
    stereo_descriptor: bool = False  # two-section left||right descriptor
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scale: ScaleConfig = field(default_factory=ScaleConfig)
    track: StereoTrackConfig = field(default_factory=StereoTrackConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)


def _parse_value(text: str, typ):
    if typ is bool:
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return typ(text)


def read_flat_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value file into a string->string mapping."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_flat(cfg, flat: dict[str, str], prefix: str = ""):
    """Apply dotted-key overrides to a (possibly nested) config dataclass."""
    for f in dataclasses.fields(cfg):
        dotted = f"{prefix}{f.name}"
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            apply_flat(value, flat, prefix=f"{dotted}.")
        elif dotted in flat:
            setattr(cfg, f.name, _parse_value(flat[dotted], type(value)))
    return cfg


def flatten(cfg, prefix: str = "") -> dict[str, str]:
    """Inverse of apply_flat: dump a config tree to dotted key/value strings."""
    out: dict[str, str] = {}
    for f in dataclasses.fields(cfg):
        dotted = f"{prefix}{f.name}"
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, prefix=f"{dotted}."))
        else:
            out[dotted] = str(value)
    return out


def pipeline_config_from_file(path: str | Path) -> PipelineConfig:
    cfg = PipelineConfig()
    apply_flat(cfg, read_flat_config(path))
    return cfg
