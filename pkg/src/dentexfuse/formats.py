"""On-disk formats shared by the CLI, the synthetic generator and the pipeline.

Prediction file
    JSON array of ``{"image_id", "bbox": [x, y, w, h], "category", "score"?,
    "source_id"?}``. ``category`` is a global tooth id (1..32) for tooth
    sources and a 1-based disease id for disease files.

Crop-frame sidecar
    ``{"<image_id>": {"<quadrant>": {"crop_box": [x, y, w, h],
    "crop_size": [w, h]}}}``.

Submission
    JSON array of COCO-results records with ``category_id_1`` (quadrant),
    ``category_id_2`` (tooth in quadrant) and ``category_id_3`` (disease),
    each shifted by the run's index base.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .annotations import ImageInfo
from .errors import IntegrityError, ParseError, RangeError
from .geometry import BBox, CropFrame
from .postprocess import FusedFinding

__all__ = [
    "PredictionRecord",
    "read_json",
    "write_json_atomic",
    "write_text_atomic",
    "load_images",
    "parse_predictions",
    "load_predictions",
    "dump_predictions",
    "parse_crop_frames",
    "dump_crop_frames",
    "submission_records",
]


@dataclass(frozen=True)
class PredictionRecord:
    image_id: int
    bbox: BBox
    category: int
    score: float | None = None
    source_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"image_id": self.image_id, "bbox": self.bbox.to_list(), "category": self.category}
        if self.score is not None:
            rec["score"] = self.score
        if self.source_id is not None:
            rec["source_id"] = self.source_id
        return rec


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}: line {exc.lineno} column {exc.colno}") from None


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: str | os.PathLike, data: Any) -> None:
    write_text_atomic(path, json.dumps(data, indent=2, allow_nan=False) + "\n")


def load_images(path: str | os.PathLike) -> list[ImageInfo]:
    """Image list from any annotation-style document (only ``images`` is read)."""
    data = read_json(path)
    raw = data.get("images") if isinstance(data, dict) else None
    if not isinstance(raw, list):
        raise ParseError("missing 'images' array", f"{path}: $.images")
    out = []
    for i, im in enumerate(raw):
        try:
            out.append(ImageInfo(int(im["id"]), str(im.get("file_name", "")), int(im["width"]), int(im["height"])))
        except (KeyError, TypeError, ValueError):
            raise ParseError("image needs integer id, width and height", f"{path}: $.images[{i}]") from None
    return out


def parse_predictions(data: Any, where: str = "$") -> list[PredictionRecord]:
    if not isinstance(data, list):
        raise ParseError("prediction file must be a JSON array", where)
    out = []
    for i, rec in enumerate(data):
        loc = f"{where}[{i}]"
        if not isinstance(rec, dict):
            raise ParseError("record must be an object", loc)
        try:
            box = BBox.from_xywh(rec["bbox"])
            image_id = int(rec["image_id"])
            category = int(rec["category"])
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", loc) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), loc) from None
        if not all(math.isfinite(v) for v in box.to_list()):
            raise ParseError("non-finite bbox", loc)
        score = rec.get("score")
        if score is not None:
            score = float(score)
            if not 0.0 <= score <= 1.0:
                raise RangeError(f"{loc}: score {score} outside [0, 1]")
        source = rec.get("source_id")
        out.append(PredictionRecord(image_id, box, category, score, None if source is None else str(source)))
    return out


def load_predictions(path: str | os.PathLike) -> list[PredictionRecord]:
    return parse_predictions(read_json(path), str(path))


def dump_predictions(records: Iterable[PredictionRecord]) -> list[dict[str, Any]]:
    return [r.to_dict() for r in records]


def parse_crop_frames(
    data: Any, images: Mapping[int, ImageInfo], where: str = "$"
) -> dict[tuple[int, int], CropFrame]:
    if not isinstance(data, dict):
        raise ParseError("crop-frame sidecar must be an object keyed by image id", where)
    frames = {}
    for image_key, per_quadrant in data.items():
        try:
            image_id = int(image_key)
        except ValueError:
            raise ParseError(f"image key {image_key!r} is not an integer", where) from None
        if image_id not in images:
            raise IntegrityError(f"{where}: crop frames for unknown image id {image_id}")
        im = images[image_id]
        if not isinstance(per_quadrant, dict):
            raise ParseError("expected an object keyed by quadrant", f"{where}.{image_key}")
        for q_key, rec in per_quadrant.items():
            loc = f"{where}.{image_key}.{q_key}"
            try:
                q = int(q_key)
                box = BBox.from_xywh(rec["crop_box"])
                cw, ch = (int(v) for v in rec["crop_size"])
            except (KeyError, TypeError, ValueError):
                raise ParseError("frame needs quadrant key, crop_box [x,y,w,h] and crop_size [w,h]", loc) from None
            if q not in (1, 2, 3, 4):
                raise RangeError(f"{loc}: quadrant {q} out of range 1..4")
            try:
                frames[(image_id, q)] = CropFrame(box, (im.width, im.height), (cw, ch))
            except ValueError as exc:
                raise RangeError(f"{loc}: {exc}") from None
    return frames


def dump_crop_frames(frames: Mapping[tuple[int, int], CropFrame]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for (image_id, q), fr in sorted(frames.items()):
        out.setdefault(str(image_id), {})[str(q)] = {
            "crop_box": fr.crop_box.to_list(), "crop_size": list(fr.crop_size)}
    return out


def submission_records(findings: Sequence[FusedFinding]) -> list[dict[str, Any]]:
    out = []
    for f in findings:
        off = f.index_base.offset
        tooth = f.tooth
        out.append({
            "image_id": f.image_id,
            "bbox": f.bbox.to_list(),
            "score": f.score,
            "category_id_1": None if tooth is None else tooth.quadrant - off,
            "category_id_2": None if tooth is None else tooth.in_quadrant - off,
            "category_id_3": f.disease.id - off,
            "tooth_fdi": f.tooth_fdi,
            "disease": f.disease.name,
        })
    return out

