"""Axis-aligned box arithmetic shared by every stage of the pipeline.

Boxes are stored COCO-style as ``(x, y, w, h)`` with the origin at the
top-left corner. IoU uses continuous coordinates (no ``+1`` pixel
convention) so the voting step and the evaluator agree on overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

__all__ = ["BBox", "CropFrame", "iou", "rescale_box", "restore_to_image", "clamp_box"]


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box width/height must be >= 0, got w={self.w}, h={self.h}")

    @classmethod
    def from_xywh(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"expected [x, y, w, h], got {list(values)!r}")
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(float(x1), float(y1), max(0.0, float(x2) - x1), max(0.0, float(y2) - y1))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x2, self.y2)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class CropFrame:
    """Where a quadrant crop came from and what raster it was resized to.

    ``crop_box`` is in whole-image pixels, ``source_size`` is the whole
    image ``(width, height)`` and ``crop_size`` the working raster size the
    crop was resized to before segmentation.
    """

    crop_box: BBox
    source_size: tuple[int, int]
    crop_size: tuple[int, int]

    def __post_init__(self) -> None:
        if min(self.crop_size) < 1:
            raise ValueError(f"crop_size must be >= 1 in both axes, got {self.crop_size}")
        if min(self.source_size) < 1:
            raise ValueError(f"source_size must be >= 1 in both axes, got {self.source_size}")
        clamped = clamp_box(self.crop_box, *self.source_size)
        if clamped != self.crop_box:
            object.__setattr__(self, "crop_box", clamped)


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    inter = ix * iy if ix > 0 and iy > 0 else 0.0
    # extents from corners, so a box compared with itself gives inter == union exactly
    union = (a.x2 - a.x) * (a.y2 - a.y) + (b.x2 - b.x) * (b.y2 - b.y) - inter
    if union <= 0:
        return 0.0
    # guards against rounding pushing the ratio above 1
    return min(1.0, max(0.0, inter / union))


def clamp_box(b: BBox, width: float, height: float) -> BBox:
    if b.x >= 0 and b.y >= 0 and b.x2 <= width and b.y2 <= height:
        return b
    x1 = min(max(b.x, 0.0), width)
    y1 = min(max(b.y, 0.0), height)
    x2 = min(max(b.x2, 0.0), width)
    y2 = min(max(b.y2, 0.0), height)
    return BBox(x1, y1, max(0.0, x2 - x1), max(0.0, y2 - y1))


def rescale_box(
    b: BBox, from_size: tuple[float, float], to_size: tuple[float, float]
) -> BBox:
    """Scale x/w by ``to_w / from_w`` and y/h by ``to_h / from_h``."""
    fw, fh = from_size
    tw, th = to_size
    if min(fw, fh, tw, th) < 1:
        raise ValueError(f"sizes must be >= 1, got from={from_size}, to={to_size}")
    sx = tw / fw
    sy = th / fh
    return BBox(b.x * sx, b.y * sy, b.w * sx, b.h * sy)


def restore_to_image(b_local: BBox, frame: CropFrame) -> BBox:
    """Map a box from a quadrant's working raster back to whole-image pixels."""
    crop = frame.crop_box
    cw, ch = frame.crop_size
    # ratio first so a full-raster box maps onto crop_box without rounding
    moved = BBox(
        crop.x + (b_local.x / cw) * crop.w,
        crop.y + (b_local.y / ch) * crop.h,
        (b_local.w / cw) * crop.w,
        (b_local.h / ch) * crop.h,
    )
    return clamp_box(moved, *frame.source_size)
