"""Polygon to label-mask rasterization and mask to box extraction.

Pixel ``(row, col)`` belongs to a polygon when its center
``(col + 0.5, row + 0.5)`` is inside under the even-odd rule, with all
rings of an object tested together (so nested rings cut holes).
Whole-image masks carry global tooth ids 0..32. Quadrant masks carry 1..8
for teeth of the reference quadrant and :data:`OTHER_QUADRANT` for the rest.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .annotations import AnnotatedObject, Ring, to_global
from .errors import ParseError, RangeError
from .geometry import BBox

__all__ = [
    "OTHER_QUADRANT",
    "LabelMask",
    "Labeling",
    "Component",
    "rasterize_objects",
    "polygon_coverage",
    "connected_components",
    "largest_component_boxes",
    "crop_mask",
    "resize_mask",
    "read_mask",
    "write_mask",
]

log = logging.getLogger(__name__)

OTHER_QUADRANT = 9


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray  # (height, width), row-major
    skipped: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise RangeError(f"label mask must be 2-D, got shape {arr.shape}")
        if arr.size and arr.min() < 0:
            raise RangeError("label mask values must be >= 0")
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "LabelMask":
        return cls(np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class Labeling:
    """``kind`` is ``"global_32"`` or ``"quadrant_9"`` (with ``quadrant`` set)."""

    kind: str = "global_32"
    quadrant: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("global_32", "quadrant_9"):
            raise RangeError(f"unknown labeling {self.kind!r}")
        if self.kind == "quadrant_9" and self.quadrant not in (1, 2, 3, 4):
            raise RangeError("quadrant_9 labeling needs a reference quadrant in 1..4")

    @classmethod
    def quadrant_9(cls, quadrant: int) -> "Labeling":
        return cls("quadrant_9", quadrant)

    def label_of(self, obj: AnnotatedObject) -> int | None:
        tooth = obj.tooth
        if tooth is None:
            return None
        if self.kind == "global_32":
            return to_global(tooth)
        return tooth.in_quadrant if tooth.quadrant == self.quadrant else OTHER_QUADRANT


@dataclass(frozen=True)
class Component:
    label: int
    pixel_count: int
    bbox: BBox
    first_pixel: int  # row-major index of the component's first pixel


def _usable_rings(rings: Sequence[Ring]) -> list[np.ndarray]:
    out = []
    for ring in rings:
        pts = np.asarray(ring, dtype=float).reshape(-1, 2)
        if len({(float(x), float(y)) for x, y in pts}) >= 3:
            out.append(pts)
    return out


def _coverage_window(rings: Sequence[Ring], width: int, height: int) -> tuple[int, int, np.ndarray] | None:
    """Coverage restricted to the polygon's pixel window: ``(row0, col0, bool array)``."""
    usable = _usable_rings(rings)
    if not usable:
        return None
    starts = np.concatenate(usable)
    ends = np.concatenate([np.roll(p, -1, axis=0) for p in usable])
    x0, y0 = starts[:, 0], starts[:, 1]
    x1, y1 = ends[:, 0], ends[:, 1]

    row_lo = max(0, int(np.floor(starts[:, 1].min() - 0.5)))
    row_hi = min(height - 1, int(np.ceil(starts[:, 1].max() - 0.5)))
    col_lo = max(0, int(np.floor(starts[:, 0].min() - 0.5)))
    col_hi = min(width - 1, int(np.ceil(starts[:, 0].max() - 0.5)))
    if row_hi < row_lo or col_hi < col_lo:
        return None
    py = (np.arange(row_lo, row_hi + 1) + 0.5)[:, None]
    # half-open rule: an edge crosses a row when exactly one endpoint lies above its center line
    rows, edges = np.nonzero((y0 > py) != (y1 > py))
    n_cols = col_hi - col_lo + 1
    counts = np.zeros((row_hi - row_lo + 1, n_cols + 1), dtype=np.int32)
    if rows.size:
        ya, yb = y0[edges], y1[edges]
        xs = x0[edges] + (py[rows, 0] - ya) * (x1[edges] - x0[edges]) / (yb - ya)
        # a crossing at xs toggles every pixel center strictly left of it
        k = np.searchsorted(np.arange(col_lo, col_hi + 1) + 0.5, xs, side="left")
        np.add.at(counts, (rows, 0), 1)
        np.add.at(counts, (rows, k), -1)
    return row_lo, col_lo, (np.cumsum(counts[:, :n_cols], axis=1) % 2) == 1


def polygon_coverage(rings: Sequence[Ring], width: int, height: int) -> np.ndarray:
    """Boolean ``(height, width)`` array of pixel centers inside the rings (even-odd)."""
    inside = np.zeros((height, width), dtype=bool)
    win = _coverage_window(rings, width, height)
    if win is not None:
        r0, c0, local = win
        inside[r0:r0 + local.shape[0], c0:c0 + local.shape[1]] = local
    return inside


def rasterize_objects(
    objects: Iterable[AnnotatedObject],
    width: int,
    height: int,
    labeling: Labeling | None = None,
) -> LabelMask:
    """Paint each object's polygon with its label; later objects overwrite earlier ones."""
    labeling = labeling or Labeling()
    grid = np.zeros((height, width), dtype=np.uint8)
    skipped = 0
    for obj in objects:
        label = labeling.label_of(obj)
        if label is None or not _usable_rings(obj.polygon):
            skipped += 1
            continue
        win = _coverage_window(obj.polygon, width, height)
        if win is not None:
            r0, c0, local = win
            grid[r0:r0 + local.shape[0], c0:c0 + local.shape[1]][local] = label
    if skipped:
        log.warning("rasterize: skipped %d object(s) without a usable polygon or tooth label", skipped)
    return LabelMask(grid, skipped=skipped)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise RangeError(f"connectivity must be 4 or 8, got {connectivity!r}")


def connected_components(mask: LabelMask, connectivity: int = 8) -> list[Component]:
    """Every maximal same-label region with label >= 1.

    Sorted by label, then pixel count descending, then bbox top-left
    corner in scan order (row, then column), then first pixel.
    """
    structure = _structure(connectivity)
    grid = mask.labels
    comps: list[Component] = []
    for label in np.unique(grid):
        if label == 0:
            continue
        regions, n = ndimage.label(grid == label, structure=structure)
        if n == 0:
            continue
        counts = np.bincount(regions.ravel(), minlength=n + 1)
        flat = regions.ravel()
        ids, first = np.unique(flat, return_index=True)
        first_of = dict(zip(ids.tolist(), first.tolist()))
        for idx, sl in enumerate(ndimage.find_objects(regions), start=1):
            rows, cols = sl
            comps.append(Component(
                label=int(label),
                pixel_count=int(counts[idx]),
                bbox=BBox(float(cols.start), float(rows.start),
                          float(cols.stop - cols.start), float(rows.stop - rows.start)),
                first_pixel=int(first_of[idx]),
            ))
    comps.sort(key=lambda c: (c.label, -c.pixel_count, c.bbox.y, c.bbox.x, c.first_pixel))
    return comps


def largest_component_boxes(mask: LabelMask, connectivity: int = 8) -> dict[int, BBox]:
    boxes: dict[int, BBox] = {}
    for comp in connected_components(mask, connectivity):
        boxes.setdefault(comp.label, comp.bbox)
    return boxes


def crop_mask(mask: LabelMask, box: BBox) -> LabelMask:
    """Pixels whose centers fall inside ``box``."""
    c0 = max(0, int(np.ceil(box.x - 0.5)))
    r0 = max(0, int(np.ceil(box.y - 0.5)))
    c1 = min(mask.width, int(np.ceil(box.x2 - 0.5)))
    r1 = min(mask.height, int(np.ceil(box.y2 - 0.5)))
    return LabelMask(mask.labels[r0:max(r0, r1), c0:max(c0, c1)].copy())


def resize_mask(mask: LabelMask, width: int, height: int) -> LabelMask:
    """Nearest-neighbour resample; label values are never blended."""
    if width < 1 or height < 1:
        raise RangeError(f"target size must be >= 1, got {width}x{height}")
    if mask.width == 0 or mask.height == 0:
        return LabelMask(np.zeros((height, width), dtype=mask.labels.dtype))
    rows = np.minimum(((np.arange(height) + 0.5) * mask.height / height).astype(int), mask.height - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * mask.width / width).astype(int), mask.width - 1)
    return LabelMask(mask.labels[np.ix_(rows, cols)])


def read_mask(path: str | os.PathLike) -> LabelMask:
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "I", "I;16"):
                raise ParseError(f"mask must be single-channel, got mode {im.mode}", str(path))
            arr = np.array(im)
    except OSError as exc:
        raise ParseError(f"cannot read mask image: {exc}", str(path)) from None
    return LabelMask(arr.astype(np.uint8) if arr.max(initial=0) < 256 else arr)


def write_mask(mask: LabelMask, path: str | os.PathLike) -> None:
    """Write an 8-bit single-channel PNG atomically (temp file + rename)."""
    from PIL import Image

    if mask.labels.size and mask.labels.max() > 255:
        raise RangeError("label values above 255 do not fit an 8-bit mask")
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    os.close(fd)
    try:
        Image.fromarray(mask.labels.astype(np.uint8)).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
