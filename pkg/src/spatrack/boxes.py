"""Axis-aligned bounding boxes: 0-based internally, 1-based in files."""

from dataclasses import dataclass

import numpy as np


@dataclass
class BoundingBox:
    """Top-left corner plus extent, covering [x, x+w) x [y, y+h)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extent must be >= 1, got {self.w} x {self.h}")

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def clipped(self, frame_h, frame_w):
        """Shift the box so it keeps at least one pixel inside the frame."""
        x = min(max(self.x, 1.0 - self.w), frame_w - 1.0)
        y = min(max(self.y, 1.0 - self.h), frame_h - 1.0)
        return BoundingBox(x, y, self.w, self.h)

    def to_external(self):
        """1-based (x, y, w, h) tuple for files."""
        return (self.x + 1.0, self.y + 1.0, self.w, self.h)

    @staticmethod
    def from_external(x, y, w, h):
        return BoundingBox(x - 1.0, y - 1.0, w, h)


def iou(b1, b2):
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x)
    iy = min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = b1.w * b1.h + b2.w * b2.h - inter
    return float(inter / union)


def center_error(b1, b2):
    """Euclidean distance between box centers in pixels."""
    (x1, y1), (x2, y2) = b1.center, b2.center
    return float(np.hypot(x1 - x2, y1 - y2))
