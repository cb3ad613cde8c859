"""End-to-end processing of a directory of frames."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import PipelineConfig
from .distancing import BoundingBox, CameraModel, FrameAssessment, assess_frame
from .errors import ConfigError, EmptyROIError, ThermoguardError
from .jsonio import assessment_record, dumps, read_detections
from .netfile import Model, load_model
from .render import render_annotated
from .thermal import (FRAME_SUFFIXES, PersonTemperature, frame_to_tensor, person_temperature,
                      read_frame, write_ppm)
from .yolo import Detection

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_FRAME_FAILED = 0, 1, 2
REPORT_NAME = "report.json"


@dataclass(frozen=True)
class FrameResult:
    frame_id: str
    assessment: FrameAssessment = FrameAssessment()
    temperatures: Tuple[PersonTemperature, ...] = ()
    error: Optional[str] = None

    @property
    def persons(self) -> int:
        return len(self.assessment.colors)

    @property
    def violations(self) -> int:
        return len(self.assessment.violating_pairs)

    @property
    def fever_flags(self) -> int:
        return sum(t.fever for t in self.temperatures)


@dataclass(frozen=True)
class RunReport:
    frames: Tuple[FrameResult, ...] = ()
    threshold_m: float = 2.0

    @property
    def failed(self) -> List[str]:
        return [f.frame_id for f in self.frames if f.error is not None]

    @property
    def totals(self) -> Dict[str, int]:
        return {"frames": len(self.frames),
                "persons": sum(f.persons for f in self.frames),
                "violations": sum(f.violations for f in self.frames),
                "fever_flags": sum(f.fever_flags for f in self.frames),
                "failed_frames": len(self.failed)}

    @property
    def exit_code(self) -> int:
        return EXIT_FRAME_FAILED if self.failed else EXIT_OK

    def to_dict(self) -> Dict:
        frames = []
        for f in self.frames:
            rec = {"frame": f.frame_id, "persons": f.persons, "violations": f.violations,
                   "fever_flags": f.fever_flags}
            if f.error is None:
                rec["assessment"] = assessment_record(f.frame_id, f.assessment,
                                                      self.threshold_m, f.temperatures)
            else:
                rec["error"] = f.error
            frames.append(rec)
        return {"threshold_m": float(self.threshold_m), "totals": self.totals,
                "failed": self.failed, "frames": frames}


def list_frames(directory) -> List[Path]:
    """Supported frame files in ``directory``, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"frames directory {directory} does not exist")
    return sorted((p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES),
                  key=lambda p: p.name)


def _check_paths(cfg: PipelineConfig) -> None:
    det = cfg.detector
    if not det.path.exists():
        raise ConfigError(f"{det.path} does not exist", key="detector.path")
    if det.mode == "inference" and not det.netspec.is_file():
        raise ConfigError(f"{det.netspec} does not exist", key="detector.netspec")


def scale_detections(dets: Sequence[Detection], from_size: int, width: int,
                     height: int) -> List[Detection]:
    sx, sy = width / from_size, height / from_size
    return [replace(d, x=d.x * sx, y=d.y * sy, w=d.w * sx, h=d.h * sy) for d in dets]


class _Runner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.model: Optional[Model] = None
        self.external: Dict[str, List[Detection]] = {}
        _check_paths(cfg)
        try:
            if cfg.detector.mode == "external":
                self.external = read_detections(cfg.detector.path)
            else:
                self.model = load_model(cfg.detector.path, cfg.detector.netspec)
        except (ThermoguardError, OSError) as exc:
            raise ConfigError(f"cannot load detector: {exc}", key="detector.path") from exc
        self.decode = cfg.decode
        if self.model is not None and self.decode.input_size != self.model.input_size:
            log.info("decode input_size %d overridden by model input %d",
                     self.decode.input_size, self.model.input_size)
            self.decode = replace(self.decode, input_size=self.model.input_size)

    def detections(self, frame) -> List[Detection]:
        if self.model is None:
            return self.external.get(frame.id, [])
        size = self.model.input_size
        dets = self.model.detect(frame_to_tensor(frame, size), self.decode)
        return scale_detections(dets, size, frame.width, frame.height)

    def process(self, path: Path) -> FrameResult:
        cfg = self.cfg
        frame_id = path.stem
        try:
            frame = read_frame(path, cfg.calibration)
            dets = [d for d in self.detections(frame) if d.class_id == 0]
            boxes = [BoundingBox.from_detection(d) for d in dets]
            camera = CameraModel(cfg.camera.range_m, cfg.camera.hfov_deg,
                                 cfg.camera.image_width_px or frame.width,
                                 cfg.camera.image_height_px or frame.height)
            assessment = assess_frame(boxes, camera, cfg.distancing)
            temps = []
            if cfg.calibration is not None:
                for k, box in enumerate(boxes):
                    try:
                        temps.append(person_temperature(frame, box, cfg.fever, k))
                    except EmptyROIError:
                        log.warning("%s: box %d lies outside the frame", frame_id, k)
            result = FrameResult(frame_id, assessment, tuple(temps))
            out = cfg.output_dir
            (out / f"{frame_id}.ppm").write_bytes(
                write_ppm(render_annotated(frame, assessment, cfg.render)))
            record = assessment_record(frame_id, assessment, cfg.distancing.threshold_m, temps)
            (out / f"{frame_id}.json").write_text(dumps(record, indent=2) + "\n")
            log.info("%s: %d persons, %d violations", frame_id, result.persons,
                     result.violations)
            return result
        except (ThermoguardError, OSError) as exc:
            log.error("%s: %s", frame_id, exc)
            return FrameResult(frame_id, error=f"{type(exc).__name__}: {exc}")


def run_pipeline(cfg: PipelineConfig, frames: Sequence, jobs: int = 1) -> RunReport:
    """Process ``frames`` in order and write per-frame outputs plus ``report.json``.

    Raises ConfigError before touching any frame if the configuration or the
    detector inputs are unusable.  Per-frame failures are recorded in the
    report instead of aborting the run.
    """
    paths = [Path(p) for p in frames]
    if not paths:
        raise ConfigError("no frames to process")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise ConfigError("frame file names must have distinct stems")
    runner = _Runner(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(runner.process, paths))
    else:
        results = [runner.process(p) for p in paths]
    report = RunReport(tuple(results), cfg.distancing.threshold_m)
    (cfg.output_dir / REPORT_NAME).write_text(dumps(report.to_dict(), indent=2) + "\n")
    return report
