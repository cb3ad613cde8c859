"""Detection scoring: greedy IoU matching, average precision and miss rate.

Protocol: one IoU threshold (0.5 by default), greedy matching in descending
score order, all-points interpolated AP.  "Miss rate" here is the plain
FN / (TP + FN) at a score threshold, not the log-average miss rate over FPPI
used by some pedestrian benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .distancing import BoundingBox
from .errors import DomainError, UndefinedMetricError
from .yolo import Detection, iou


@dataclass(frozen=True)
class GroundTruthLabel:
    frame_id: str
    boxes: Tuple[BoundingBox, ...] = ()
    dataset: Optional[str] = None


@dataclass(frozen=True)
class MatchResult:
    true_positives: int
    false_positives: int
    false_negatives: int
    matched_pairs: Tuple[Tuple[int, int, float], ...] = ()
    # per detection, in input order
    scores: Tuple[float, ...] = ()
    tp_flags: Tuple[bool, ...] = ()

    @property
    def num_gt(self) -> int:
        return self.true_positives + self.false_negatives


@dataclass(frozen=True)
class EvalSummary:
    average_precision: float
    miss_rate: float
    pr_curve: Tuple[Tuple[float, float], ...]
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    fractions: Tuple[float, float, float] = (0.70, 0.20, 0.10)

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise DomainError(f"split needs three non-negative fractions, got {self.fractions}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9):
            raise DomainError(f"split fractions must sum to 1, got {sum(self.fractions)}")


def _xywh(box):
    if isinstance(box, (tuple, list)):
        return tuple(box)
    return (box.x, box.y, box.w, box.h)


def detection_order(dets: Sequence[Detection]) -> List[int]:
    """Indices by descending score; ties go to the smaller x, then y."""
    return sorted(range(len(dets)), key=lambda k: (-dets[k].score, dets[k].x, dets[k].y, k))


def match_detections(dets: Sequence[Detection], gts: Sequence, iou_min: float = 0.5) -> MatchResult:
    if not 0 < iou_min <= 1:
        raise DomainError(f"iou_min must be in (0, 1], got {iou_min}")
    gt_boxes = [_xywh(g) for g in gts]
    taken = [False] * len(gt_boxes)
    flags = [False] * len(dets)
    pairs = []
    for k in detection_order(dets):
        best, best_iou = -1, iou_min
        for g, box in enumerate(gt_boxes):
            if taken[g]:
                continue
            v = iou(dets[k].bbox, box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = g, v
        if best >= 0:
            taken[best] = True
            flags[k] = True
            pairs.append((k, best, best_iou))
    tp = len(pairs)
    return MatchResult(tp, len(dets) - tp, len(gt_boxes) - tp, tuple(pairs),
                       tuple(float(d.score) for d in dets), tuple(flags))


def combine(results: Sequence[MatchResult]) -> MatchResult:
    """Pool counts over frames (pair indices stay frame-local)."""
    return MatchResult(
        sum(r.true_positives for r in results),
        sum(r.false_positives for r in results),
        sum(r.false_negatives for r in results),
        tuple(p for r in results for p in r.matched_pairs),
        tuple(s for r in results for s in r.scores),
        tuple(f for r in results for f in r.tp_flags),
    )


def pr_curve(results: Sequence[MatchResult]) -> List[Tuple[float, float]]:
    """(recall, precision) at every distinct score, from the highest score down."""
    num_gt = sum(r.num_gt for r in results)
    if num_gt == 0:
        raise UndefinedMetricError("precision/recall undefined without ground-truth boxes")
    scores = np.array([s for r in results for s in r.scores], dtype=np.float64)
    flags = np.array([f for r in results for f in r.tp_flags], dtype=bool)
    if scores.size == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    scores, flags = scores[order], flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return [(float(tp[e] / num_gt), float(tp[e] / (tp[e] + fp[e]))) for e in ends]


def ap_from_curve(points: Sequence[Tuple[float, float]]) -> float:
    """Area under the monotone precision envelope, as a step function of recall."""
    ap, prev_recall = 0.0, 0.0
    precisions = [p for _, p in points]
    # running max from the right
    env = precisions[:]
    for k in range(len(env) - 2, -1, -1):
        env[k] = max(env[k], env[k + 1])
    for (recall, _), envelope in zip(points, env):
        ap += (recall - prev_recall) * envelope
        prev_recall = recall
    return min(1.0, max(0.0, ap))


def average_precision(results: Sequence[MatchResult]) -> float:
    return ap_from_curve(pr_curve(results))


def miss_rate(result: MatchResult) -> float:
    total = result.true_positives + result.false_negatives
    if total == 0:
        raise UndefinedMetricError("miss rate undefined without ground-truth boxes")
    return result.false_negatives / total


def evaluate(frames: Sequence[Tuple[Sequence[Detection], Sequence]], iou_min: float = 0.5,
             score_threshold: float = 0.5) -> Tuple[EvalSummary, List[MatchResult]]:
    """Score ``(detections, ground_truth)`` pairs.

    AP uses every detection; TP/FP/FN and the miss rate use only detections
    with score >= ``score_threshold``.  Returns the summary and the per-frame
    results at the operating threshold.
    """
    all_results = [match_detections(d, g, iou_min) for d, g in frames]
    points = pr_curve(all_results)
    op = [match_detections([x for x in d if x.score >= score_threshold], g, iou_min)
          for d, g in frames]
    pooled = combine(op)
    return EvalSummary(ap_from_curve(points), miss_rate(pooled), tuple(points),
                       pooled.true_positives, pooled.false_positives,
                       pooled.false_negatives), op


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_sizes(n: int, fractions=(0.70, 0.20, 0.10)) -> Tuple[int, int, int]:
    train = min(n, _round_half_up(fractions[0] * n))
    val = min(n - train, _round_half_up(fractions[1] * n))
    return train, val, n - train - val


def split_dataset(frame_ids: Sequence, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then cut into train / validation / test lists."""
    ids = list(frame_ids)
    if not ids:
        raise DomainError("cannot split an empty dataset")
    perm = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[k] for k in perm]
    n_train, n_val, _ = split_sizes(len(ids), spec.fractions)
    return (shuffled[:n_train], shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


def make_synthetic_dataset(n_frames: int = 50, seed: int = 0, drop: float = 0.10,
                           jitter: float = 0.05, spurious: float = 0.10,
                           width: int = 640, height: int = 480):
    """Ground truth plus a perturbed "detector" output for each frame.

    Each ground-truth box is dropped with probability ``drop``; survivors are
    jittered by up to ``jitter`` of their size.  For every ground-truth box a
    spurious low-ish scoring box is added with probability ``spurious``.
    Returns a list of ``(frame_id, detections, ground_truth_boxes)``.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for f in range(n_frames):
        gts = []
        for _ in range(int(rng.integers(1, 7))):
            w = float(rng.uniform(20, 80))
            h = float(w * rng.uniform(1.8, 3.0))
            x = float(rng.uniform(0, width - w))
            y = float(rng.uniform(0, height - h))
            gts.append(BoundingBox(x, y, w, h))
        dets = []
        for g in gts:
            if rng.random() >= drop:
                dx, dy, dw, dh = rng.uniform(-jitter, jitter, 4)
                dets.append(Detection(g.x + dx * g.w, g.y + dy * g.h,
                                      g.w * (1 + dw), g.h * (1 + dh),
                                      round(float(rng.uniform(0.3, 1.0)), 3)))
            if rng.random() < spurious:
                w = float(rng.uniform(20, 80))
                h = float(w * rng.uniform(1.8, 3.0))
                dets.append(Detection(float(rng.uniform(0, width - w)),
                                      float(rng.uniform(0, height - h)), w, h,
                                      round(float(rng.uniform(0.05, 0.8)), 3)))
        frames.append((f"frame_{f:04d}", dets, gts))
    return frames
