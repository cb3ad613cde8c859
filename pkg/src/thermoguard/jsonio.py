"""JSON wire formats: detections, ground-truth labels, assessments, reports.

Output floats are always written with six decimals and no exponent so that
reports diff cleanly and are byte-identical between runs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .distancing import BoundingBox, FrameAssessment
from .errors import ParseError
from .evaluation import GroundTruthLabel
from .yolo import CLASS_NAMES, Detection

FLOAT_DIGITS = 6


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite number {x}")
    s = f"{x:.{FLOAT_DIGITS}f}"
    if s.lstrip("-") == "0." + "0" * FLOAT_DIGITS:
        s = s.lstrip("-")
    return s


def dumps(obj, indent: Optional[int] = None) -> str:
    """Like ``json.dumps`` but with fixed-point floats. Dict order is kept."""
    return _encode(obj, indent, 0)


def _encode(obj, indent, level) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return _wrap("{", "}", items, indent, level)
    if isinstance(obj, (list, tuple)):
        return _wrap("[", "]", [_encode(v, indent, level + 1) for v in obj], indent, level)
    if hasattr(obj, "item"):  # numpy scalar
        return _encode(obj.item(), indent, level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _wrap(open_, close, items, indent, level):
    if not items:
        return open_ + close
    if indent is None:
        return open_ + ", ".join(items) + close
    pad = " " * (indent * (level + 1))
    return open_ + "\n" + ",\n".join(pad + i for i in items) + "\n" + " " * (indent * level) + close


# --- detections ------------------------------------------------------------

def detection_to_dict(det: Detection) -> Dict:
    return {"x": float(det.x), "y": float(det.y), "w": float(det.w), "h": float(det.h),
            "score": float(det.score), "class": det.class_name}


def detections_record(frame_id: str, dets: Sequence[Detection]) -> Dict:
    return {"frame": frame_id, "detections": [detection_to_dict(d) for d in dets]}


def _number(rec, key, where):
    try:
        v = rec[key]
    except (KeyError, TypeError):
        raise ParseError(f"{where}: missing {key!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"{where}: {key!r} must be a finite number, got {v!r}")
    return float(v)


def detection_from_dict(rec: Dict, where: str = "detection") -> Detection:
    cls = rec.get("class", CLASS_NAMES[0]) if isinstance(rec, dict) else None
    if isinstance(cls, str):
        if cls not in CLASS_NAMES:
            raise ParseError(f"{where}: unknown class {cls!r}")
        class_id = CLASS_NAMES.index(cls)
    elif isinstance(cls, int) and not isinstance(cls, bool):
        class_id = cls
    else:
        raise ParseError(f"{where}: bad class {cls!r}")
    score = _number(rec, "score", where) if "score" in rec else 1.0
    if not 0.0 <= score <= 1.0:
        raise ParseError(f"{where}: score {score} outside [0, 1]")
    w, h = _number(rec, "w", where), _number(rec, "h", where)
    if not (w > 0 and h > 0):
        raise ParseError(f"{where}: box width and height must be positive, got {w}x{h}")
    return Detection(_number(rec, "x", where), _number(rec, "y", where), w, h, score, class_id)


def _records(text: str, source: str) -> Iterable[Tuple[int, Dict]]:
    """Yield JSON objects from a JSON-lines text or a single JSON document."""
    stripped = text.strip()
    if not stripped:
        return
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        yield 1, doc
        return
    if isinstance(doc, list):
        for k, rec in enumerate(doc, start=1):
            yield k, rec
        return
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{source} line {lineno}: {exc.msg}") from None


def parse_detections(text: str, source: str = "detections") -> Dict[str, List[Detection]]:
    out: Dict[str, List[Detection]] = {}
    for lineno, rec in _records(text, source):
        where = f"{source} record {lineno}"
        if not isinstance(rec, dict) or not isinstance(rec.get("frame"), str):
            raise ParseError(f"{where}: expected an object with a string 'frame'")
        dets = rec.get("detections", [])
        if not isinstance(dets, list):
            raise ParseError(f"{where}: 'detections' must be a list")
        parsed = [detection_from_dict(d, where) for d in dets]
        out.setdefault(rec["frame"], []).extend(parsed)
    return out


def read_detections(path) -> Dict[str, List[Detection]]:
    """Read a JSON-lines file, or a directory holding one ``<frame>.json`` per frame."""
    path = Path(path)
    if path.is_dir():
        out: Dict[str, List[Detection]] = {}
        for f in sorted(path.glob("*.json")):
            for frame, dets in parse_detections(f.read_text(), f.name).items():
                out.setdefault(frame, []).extend(dets)
        return out
    return parse_detections(path.read_text(), path.name)


# --- ground truth ----------------------------------------------------------

def parse_labels(text: str, source: str = "labels") -> List[GroundTruthLabel]:
    labels = []
    for lineno, rec in _records(text, source):
        where = f"{source} record {lineno}"
        if not isinstance(rec, dict) or not isinstance(rec.get("frame"), str):
            raise ParseError(f"{where}: expected an object with a string 'frame'")
        boxes = rec.get("boxes", [])
        if not isinstance(boxes, list):
            raise ParseError(f"{where}: 'boxes' must be a list")
        try:
            parsed = tuple(BoundingBox(_number(b, "x", where), _number(b, "y", where),
                                       _number(b, "w", where), _number(b, "h", where))
                           for b in boxes)
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
        dataset = rec.get("dataset")
        labels.append(GroundTruthLabel(rec["frame"], parsed,
                                       dataset if isinstance(dataset, str) else None))
    return labels


def read_labels(path) -> List[GroundTruthLabel]:
    path = Path(path)
    return parse_labels(path.read_text(), path.name)


def label_record(label: GroundTruthLabel) -> Dict:
    rec = {"frame": label.frame_id,
           "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in label.boxes]}
    if label.dataset is not None:
        rec["dataset"] = label.dataset
    return rec


# --- assessments -----------------------------------------------------------

def assessment_record(frame_id: str, assessment: FrameAssessment, threshold_m: float,
                      temperatures=None) -> Dict:
    temps = {t.box_index: t for t in (temperatures or ())}
    persons = []
    for k, (box, color) in enumerate(zip(assessment.boxes, assessment.colors)):
        person = {"bbox": {"x": float(box.x), "y": float(box.y),
                           "w": float(box.w), "h": float(box.h)},
                  "color": color}
        if k in temps:
            person["temperature_c"] = float(temps[k].temperature_c)
            person["fever"] = bool(temps[k].fever)
        persons.append(person)
    return {"frame": frame_id, "threshold_m": float(threshold_m), "persons": persons,
            "violations": [[i, j, float(d)] for i, j, d in assessment.violating_pairs]}
