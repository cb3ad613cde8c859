"""Draw assessed boxes onto a frame."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from .config import RenderStyle
from .distancing import RED, FrameAssessment
from .thermal import ThermalFrame, to_display


def pixel_rect(box, width: int, height: int) -> Optional[Tuple[int, int, int, int]]:
    """Half-open integer rectangle (x0, y0, x1, y1) of ``box`` clipped to the image.

    Edges are rounded half up; a box always covers at least one pixel before
    clipping.  Returns None when nothing is left after clipping.
    """
    x0 = math.floor(box.x + 0.5)
    y0 = math.floor(box.y + 0.5)
    x1 = max(math.floor(box.x + box.w + 0.5), x0 + 1)
    y1 = max(math.floor(box.y + box.h + 0.5), y0 + 1)
    x0, x1 = max(0, x0), min(width, x1)
    y0, y1 = max(0, y0), min(height, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def draw_outline(rgb: np.ndarray, rect, color, thickness: int) -> None:
    x0, y0, x1, y1 = rect
    t = thickness
    rgb[y0:min(y0 + t, y1), x0:x1] = color
    rgb[max(y1 - t, y0):y1, x0:x1] = color
    rgb[y0:y1, x0:min(x0 + t, x1)] = color
    rgb[y0:y1, max(x1 - t, x0):x1] = color


def render_annotated(frame: ThermalFrame, assessment: FrameAssessment,
                     style: RenderStyle = RenderStyle()) -> np.ndarray:
    """Gray frame as (H, W, 3) uint8 with every box outlined in its color.

    Outlines grow inward from the box edge.  Green boxes are drawn first so a
    red outline is never hidden under an overlapping green one.
    """
    gray = to_display(frame)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    items = list(zip(assessment.boxes, assessment.colors))
    items.sort(key=lambda item: item[1] == RED)  # stable: green then red
    for box, color in items:
        rect = pixel_rect(box, frame.width, frame.height)
        if rect is None:
            continue
        rgb_color = style.unsafe_color if color == RED else style.safe_color
        draw_outline(rgb, rect, np.array(rgb_color, dtype=np.uint8), style.line_thickness_px)
    return rgb
