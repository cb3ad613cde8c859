"""Pairwise center-distance classification of detected persons.

Distances are measured between box centers in the image plane and converted
to meters with a single meters-per-pixel factor derived from the camera range
and horizontal field of view.  There is no depth or ground-plane correction,
so two people at different distances from the camera can appear closer (or
farther apart) than they are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import List, Sequence, Tuple

from .errors import DomainError

GREEN = "green"
RED = "red"


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DomainError(f"box width and height must be positive, got {self.w}x{self.h}")

    @classmethod
    def from_detection(cls, det) -> "BoundingBox":
        return cls(det.x, det.y, det.w, det.h)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class CameraModel:
    range_m: float
    hfov_deg: float
    image_width_px: int
    image_height_px: int = 0

    def __post_init__(self):
        if not (self.range_m > 0 and math.isfinite(self.range_m)):
            raise DomainError(f"camera range must be > 0 m, got {self.range_m}")
        if not 0 < self.hfov_deg < 180:
            raise DomainError(f"horizontal FOV must be in (0, 180) degrees, got {self.hfov_deg}")
        if not self.image_width_px > 0:
            raise DomainError(f"image width must be positive, got {self.image_width_px}")


@dataclass(frozen=True)
class DistancingConfig:
    threshold_m: float = 2.0

    def __post_init__(self):
        if not (self.threshold_m > 0 and math.isfinite(self.threshold_m)):
            raise DomainError(f"threshold_m must be > 0, got {self.threshold_m}")


@dataclass(frozen=True)
class FrameAssessment:
    colors: Tuple[str, ...] = ()
    violating_pairs: Tuple[Tuple[int, int, float], ...] = ()
    distances_m: Tuple[Tuple[float, ...], ...] = ()
    boxes: Tuple[BoundingBox, ...] = ()

    @property
    def num_red(self) -> int:
        return sum(c == RED for c in self.colors)


def center(box: BoundingBox) -> Tuple[float, float]:
    return (box.x + box.w / 2, box.y + box.h / 2)


def pixel_distance(c1, c2) -> float:
    # hypot == sqrt(dx**2 + dy**2) without intermediate under/overflow
    return math.hypot(c2[0] - c1[0], c2[1] - c1[1])


def meters_per_pixel(cam: CameraModel) -> float:
    scene_width = 2.0 * cam.range_m * math.tan(math.radians(cam.hfov_deg) / 2)
    return scene_width / cam.image_width_px


def assess_frame(boxes: Sequence[BoundingBox], cam: CameraModel,
                 cfg: DistancingConfig = DistancingConfig()) -> FrameAssessment:
    """Color every box green or red.

    A lone box is green.  Otherwise every unordered pair is measured and any
    pair strictly closer than ``cfg.threshold_m`` turns both members red.
    """
    boxes = tuple(boxes)
    n = len(boxes)
    if n == 0:
        return FrameAssessment()
    if n == 1:
        return FrameAssessment((GREEN,), (), ((0.0,),), boxes)

    mpp = meters_per_pixel(cam)
    centers = [center(b) for b in boxes]
    dist = [[0.0] * n for _ in range(n)]
    colors = [GREEN] * n
    violations: List[Tuple[int, int, float]] = []
    for i, j in combinations(range(n), 2):
        d = pixel_distance(centers[i], centers[j]) * mpp
        dist[i][j] = dist[j][i] = d
        if d < cfg.threshold_m:
            colors[i] = colors[j] = RED
            violations.append((i, j, d))
    return FrameAssessment(tuple(colors), tuple(violations),
                           tuple(tuple(r) for r in dist), boxes)
