"""INI-style pipeline configuration.

::

    [camera]
    range_m = 10
    hfov_deg = 90
    # image_width_px / image_height_px default to each frame's own size

    [distancing]
    threshold_m = 2.0

    [decode]
    conf = 0.5
    nms_iou = 0.5

    [thermal]
    slope = 0.01
    offset = -40
    fever_threshold_c = 37.5
    statistic = percentile
    percentile = 95

    [detector]
    mode = external          # or: inference
    path = detections.jsonl  # external: detections; inference: weights file
    netspec = model.layout   # inference only

    [render]
    line_thickness_px = 1

    [output]
    dir = out

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from .distancing import DistancingConfig
from .errors import ConfigError
from .thermal import FeverConfig, TempCalibration
from .yolo import DecodeConfig


@dataclass(frozen=True)
class CameraSettings:
    """Camera range and FOV; image size of 0 means "use the frame's size"."""

    range_m: float
    hfov_deg: float
    image_width_px: int = 0
    image_height_px: int = 0


@dataclass(frozen=True)
class DetectorMode:
    mode: str  # "inference" or "external"
    path: Path
    netspec: Optional[Path] = None


@dataclass(frozen=True)
class RenderStyle:
    safe_color: Tuple[int, int, int] = (0, 255, 0)
    unsafe_color: Tuple[int, int, int] = (255, 0, 0)
    line_thickness_px: int = 1

    def __post_init__(self):
        if self.line_thickness_px < 1:
            raise ConfigError("line thickness must be >= 1", key="render.line_thickness_px")


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraSettings
    detector: DetectorMode
    distancing: DistancingConfig = DistancingConfig()
    decode: DecodeConfig = DecodeConfig()
    fever: FeverConfig = FeverConfig()
    calibration: Optional[TempCalibration] = None
    render: RenderStyle = RenderStyle()
    output_dir: Path = Path("thermoguard_out")


def _float(v):
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("not finite")
    return x


def _int(v):
    return int(v)


def _str(v):
    return v


# section -> key -> (converter, required)
SCHEMA: Dict[str, Dict[str, Tuple[object, bool]]] = {
    "camera": {"range_m": (_float, True), "hfov_deg": (_float, True),
               "image_width_px": (_int, False), "image_height_px": (_int, False)},
    "distancing": {"threshold_m": (_float, False)},
    "decode": {"conf": (_float, False), "nms_iou": (_float, False),
               "input_size": (_int, False)},
    "thermal": {"slope": (_float, False), "offset": (_float, False),
                "fever_threshold_c": (_float, False), "statistic": (_str, False),
                "percentile": (_float, False)},
    "detector": {"mode": (_str, True), "path": (_str, True), "netspec": (_str, False)},
    "render": {"line_thickness_px": (_int, False)},
    "output": {"dir": (_str, False)},
}
REQUIRED_SECTIONS = ("camera", "detector")

# key, predicate, message
CHECKS = (
    ("camera.range_m", lambda v: v > 0, "must be > 0"),
    ("camera.hfov_deg", lambda v: 0 < v < 180, "must be in (0, 180)"),
    ("camera.image_width_px", lambda v: v >= 0, "must be >= 0"),
    ("camera.image_height_px", lambda v: v >= 0, "must be >= 0"),
    ("distancing.threshold_m", lambda v: v > 0, "must be > 0"),
    ("decode.conf", lambda v: 0 <= v <= 1, "must be in [0, 1]"),
    ("decode.nms_iou", lambda v: 0 <= v <= 1, "must be in [0, 1]"),
    ("decode.input_size", lambda v: v >= 1, "must be >= 1"),
    ("thermal.slope", lambda v: v != 0, "must be non-zero"),
    ("thermal.statistic", lambda v: v in ("max", "percentile"), "must be 'max' or 'percentile'"),
    ("thermal.percentile", lambda v: 0 < v <= 100, "must be in (0, 100]"),
    ("render.line_thickness_px", lambda v: v >= 1, "must be >= 1"),
)


def _read_ini(text: str):
    """Return {section: {key: (value, lineno)}} keeping first-seen order."""
    sections: Dict[str, Dict[str, Tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", line=lineno)
            current = line[1:-1].strip().lower()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", line=lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", line=lineno)
            sections[current] = {}
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError("expected key = value", key=key or None, line=lineno)
        if current is None:
            raise ConfigError("key outside any section", key=key, line=lineno)
        # inline comments
        for marker in (" #", " ;", "\t#", "\t;"):
            value = value.split(marker, 1)[0]
        value = value.strip()
        name = f"{current}.{key}"
        if key not in SCHEMA[current]:
            raise ConfigError("unknown key", key=name, line=lineno)
        if key in sections[current]:
            raise ConfigError("duplicate key", key=name, line=lineno)
        sections[current][key] = (value, lineno)
    return sections


def parse_config_text(text: str, base_dir=".") -> PipelineConfig:
    base_dir = Path(base_dir)
    raw = _read_ini(text)
    for sec in REQUIRED_SECTIONS:
        if sec not in raw:
            raise ConfigError(f"missing required section [{sec}]", key=sec)

    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    for sec, keys in SCHEMA.items():
        present = raw.get(sec, {})
        for key, (conv, required) in keys.items():
            name = f"{sec}.{key}"
            if key not in present:
                if required:
                    raise ConfigError("missing required key", key=name)
                continue
            value, lineno = present[key]
            lines[name] = lineno
            try:
                values[name] = conv(value)
            except ValueError:
                raise ConfigError(f"bad value {value!r}", key=name, line=lineno) from None

    for key, ok, msg in CHECKS:
        if key in values and not ok(values[key]):
            raise ConfigError(msg, key=key, line=lines[key])
    has_slope, has_offset = "thermal.slope" in values, "thermal.offset" in values
    if has_slope != has_offset:
        missing = "thermal.offset" if has_slope else "thermal.slope"
        raise ConfigError("slope and offset must be given together", key=missing)

    camera = CameraSettings(values["camera.range_m"], values["camera.hfov_deg"],
                            values.get("camera.image_width_px", 0),
                            values.get("camera.image_height_px", 0))
    distancing = DistancingConfig(values.get("distancing.threshold_m", 2.0))
    decode = DecodeConfig(values.get("decode.conf", 0.5), values.get("decode.nms_iou", 0.5),
                          values.get("decode.input_size", 224))
    fever = FeverConfig(values.get("thermal.fever_threshold_c", 37.5),
                        values.get("thermal.statistic", "percentile"),
                        values.get("thermal.percentile", 95.0))
    calibration = None
    if has_slope:
        calibration = TempCalibration(values["thermal.slope"], values["thermal.offset"])

    mode = values["detector.mode"].lower()
    if mode not in ("inference", "external"):
        raise ConfigError("mode must be 'inference' or 'external'", key="detector.mode",
                          line=lines["detector.mode"])
    netspec = values.get("detector.netspec")
    if mode == "inference" and not netspec:
        raise ConfigError("inference mode needs a netspec path", key="detector.netspec")
    if mode == "external" and netspec:
        raise ConfigError("netspec only applies to inference mode", key="detector.netspec",
                          line=lines["detector.netspec"])
    detector = DetectorMode(mode, (base_dir / values["detector.path"]).resolve(),
                            (base_dir / netspec).resolve() if netspec else None)

    render = RenderStyle(line_thickness_px=values.get("render.line_thickness_px", 1))
    output_dir = (base_dir / values.get("output.dir", "thermoguard_out")).resolve()
    return PipelineConfig(camera, detector, distancing, decode, fever, calibration,
                          render, output_dir)


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text(), path.parent)


def _num(x) -> str:
    return repr(float(x))


def serialize_config(cfg: PipelineConfig) -> str:
    """Render a config back to INI text; parsing the result gives an equal config."""
    lines = ["[camera]", f"range_m = {_num(cfg.camera.range_m)}",
             f"hfov_deg = {_num(cfg.camera.hfov_deg)}"]
    if cfg.camera.image_width_px:
        lines.append(f"image_width_px = {cfg.camera.image_width_px}")
    if cfg.camera.image_height_px:
        lines.append(f"image_height_px = {cfg.camera.image_height_px}")
    lines += ["", "[distancing]", f"threshold_m = {_num(cfg.distancing.threshold_m)}",
              "", "[decode]", f"conf = {_num(cfg.decode.confidence_threshold)}",
              f"nms_iou = {_num(cfg.decode.nms_iou_threshold)}",
              f"input_size = {cfg.decode.input_size}",
              "", "[thermal]"]
    if cfg.calibration is not None:
        lines += [f"slope = {_num(cfg.calibration.slope)}",
                  f"offset = {_num(cfg.calibration.offset)}"]
    lines += [f"fever_threshold_c = {_num(cfg.fever.fever_threshold_c)}",
              f"statistic = {cfg.fever.statistic}",
              f"percentile = {_num(cfg.fever.percentile)}",
              "", "[detector]", f"mode = {cfg.detector.mode}", f"path = {cfg.detector.path}"]
    if cfg.detector.netspec is not None:
        lines.append(f"netspec = {cfg.detector.netspec}")
    lines += ["", "[render]", f"line_thickness_px = {cfg.render.line_thickness_px}",
              "", "[output]", f"dir = {cfg.output_dir}", ""]
    return "\n".join(lines)
