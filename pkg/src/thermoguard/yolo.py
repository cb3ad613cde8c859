"""YOLOv2-style detection head: anchor decoding, IoU and greedy NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .engine import NetworkSpec, _frozen, as_tensor, forward
from .errors import DomainError, ShapeError

CLASS_NAMES = ("person",)
DEFAULT_ANCHORS = ((24.0, 64.0), (40.0, 104.0), (72.0, 168.0))
BOX_PARAMS = 5  # tx, ty, tw, th, objectness


@dataclass(frozen=True)
class AnchorSet:
    anchors: Tuple[Tuple[float, float], ...] = DEFAULT_ANCHORS

    def __post_init__(self):
        anchors = tuple((float(w), float(h)) for w, h in self.anchors)
        if not anchors:
            raise ShapeError("anchor set must contain at least one anchor")
        if any(not (w > 0 and h > 0) for w, h in anchors):
            raise DomainError(f"anchor sizes must be positive: {anchors}")
        object.__setattr__(self, "anchors", anchors)

    def __len__(self):
        return len(self.anchors)


@dataclass(frozen=True)
class Detection:
    """Scored box in pixel coordinates, top-left origin."""

    x: float
    y: float
    w: float
    h: float
    score: float
    class_id: int = 0

    @property
    def bbox(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    @property
    def class_name(self) -> str:
        if 0 <= self.class_id < len(CLASS_NAMES):
            return CLASS_NAMES[self.class_id]
        return str(self.class_id)


@dataclass(frozen=True)
class DecodeConfig:
    confidence_threshold: float = 0.5
    nms_iou_threshold: float = 0.5
    input_size: int = 224

    def __post_init__(self):
        for name in ("confidence_threshold", "nms_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must be in [0, 1], got {v}")
        if self.input_size < 1:
            raise DomainError(f"input_size must be positive, got {self.input_size}")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def decode(raw, anchors: AnchorSet, cfg: DecodeConfig, num_classes: int = 1) -> List[Detection]:
    """Turn a (B*(5+C), S, S) prediction grid into thresholded detections.

    Detections come out in cell-major order: row, column, then anchor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ShapeError(f"raw prediction must be 3-D, got ndim={raw.ndim}")
    n_anchors = len(anchors)
    per_anchor = BOX_PARAMS + num_classes
    if raw.shape[0] != n_anchors * per_anchor:
        raise ShapeError(
            f"raw prediction has {raw.shape[0]} channels, expected "
            f"{n_anchors} anchors x {per_anchor} = {n_anchors * per_anchor}")
    s_h, s_w = raw.shape[1:]
    if s_h != s_w or s_h < 1:
        raise ShapeError(f"prediction grid must be square, got {s_h}x{s_w}")
    if cfg.input_size % s_h:
        raise ShapeError(f"grid size {s_h} does not divide input size {cfg.input_size}")
    stride = cfg.input_size / s_h

    grid = raw.reshape(n_anchors, per_anchor, s_h, s_w)
    rows, cols = np.meshgrid(np.arange(s_h), np.arange(s_w), indexing="ij")
    anchor_wh = np.array(anchors.anchors)
    cx = (cols[None] + sigmoid(grid[:, 0])) * stride
    cy = (rows[None] + sigmoid(grid[:, 1])) * stride
    bw = anchor_wh[:, 0, None, None] * np.exp(grid[:, 2])
    bh = anchor_wh[:, 1, None, None] * np.exp(grid[:, 3])
    logits = grid[:, BOX_PARAMS:]
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    scores = sigmoid(grid[:, 4])[:, None] * probs  # (B, C, S, S)

    dets = []
    for i in range(s_h):
        for j in range(s_w):
            for b in range(n_anchors):
                for c in range(num_classes):
                    score = float(scores[b, c, i, j])
                    if score < cfg.confidence_threshold:
                        continue
                    w, h = float(bw[b, i, j]), float(bh[b, i, j])
                    if not (w > 0 and h > 0 and math.isfinite(w) and math.isfinite(h)):
                        continue
                    dets.append(Detection(float(cx[b, i, j]) - w / 2,
                                          float(cy[b, i, j]) - h / 2,
                                          w, h, score, c))
    return dets


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if not (aw > 0 and ah > 0 and bw > 0 and bh > 0):
        raise DomainError(f"boxes need positive width and height: {a}, {b}")
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return min(1.0, max(0.0, inter / union))


def score_order_key(det: Detection):
    return (-det.score, det.x, det.y)


def nms(dets: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy per-class suppression.

    A box survives iff its IoU with every kept box of the same class is below
    ``iou_threshold``.  Output is sorted by descending score.
    """
    kept: List[Detection] = []
    for det in sorted(dets, key=score_order_key):
        if all(k.class_id != det.class_id or iou(k.bbox, det.bbox) < iou_threshold
               for k in kept):
            kept.append(det)
    return kept


def clip_detection(det: Detection, width: float, height: float):
    """Clip to the image rectangle. Returns None if nothing is left."""
    x0, y0 = max(0.0, det.x), max(0.0, det.y)
    x1, y1 = min(float(width), det.x + det.w), min(float(height), det.y + det.h)
    if x1 <= x0 or y1 <= y0:
        return None
    return Detection(x0, y0, x1 - x0, y1 - y0, det.score, det.class_id)


@dataclass(frozen=True, eq=False)
class YoloHead:
    """1x1 convolution mapping backbone features to B*(5+C) prediction channels."""

    weights: np.ndarray  # (out_channels, in_channels)
    bias: np.ndarray
    anchors: AnchorSet = AnchorSet()
    num_classes: int = 1

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim == 4 and w.shape[2:] == (1, 1):
            w = _frozen(w.reshape(w.shape[:2]))
        b = _frozen(self.bias).reshape(-1)
        if w.ndim != 2:
            raise ShapeError(f"head weights must be (out, in), got {w.shape}")
        expected = len(self.anchors) * (BOX_PARAMS + self.num_classes)
        if w.shape[0] != expected:
            raise ShapeError(
                f"head has {w.shape[0]} outputs, {len(self.anchors)} anchors need {expected}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"head bias length {b.size} != {w.shape[0]}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def __call__(self, feature) -> np.ndarray:
        c, h, w = feature.shape
        if c != self.in_channels:
            raise ShapeError(f"head expects {self.in_channels} feature channels, got {c}")
        x = np.asarray(feature, dtype=np.float64).reshape(c, -1)
        out = self.weights.astype(np.float64) @ x + self.bias.astype(np.float64)[:, None]
        return _frozen(out.reshape(-1, h, w))


def detect(frame_tensor, net: NetworkSpec, head: YoloHead, cfg: DecodeConfig,
           anchors: AnchorSet = None) -> List[Detection]:
    """Backbone, head, decode, NMS, then clip to the input square."""
    _, feature = forward(net, as_tensor(frame_tensor))
    raw = head(feature)
    dets = decode(raw, anchors or head.anchors, cfg, head.num_classes)
    kept = nms(dets, cfg.nms_iou_threshold)
    size = cfg.input_size
    out = []
    for d in kept:
        clipped = clip_detection(d, size, size)
        if clipped is not None:
            out.append(clipped)
    return out
