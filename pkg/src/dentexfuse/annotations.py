"""Hierarchical dental annotations and the four tooth-numbering systems.

A tooth is identified internally by ``ToothId(quadrant, in_quadrant)`` with
both parts 1-based. The other systems are derived from it:

* global id ``(quadrant - 1) * 8 + in_quadrant`` in ``1..32``
* FDI two-digit string, e.g. ``"48"``
* the 0-based variant of FDI used by the challenge figures, e.g. ``"37"``

Raw annotation documents follow the challenge's COCO variant: ``images`` and
``annotations`` arrays plus one category array per hierarchy level. The
field names are configurable through :class:`SchemaMap`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import IntegrityError, ParseError, RangeError
from .geometry import BBox, clamp_box

__all__ = [
    "IndexBase",
    "ToothId",
    "to_global",
    "from_global",
    "to_fdi",
    "parse_fdi",
    "DiseaseLabel",
    "Vocabulary",
    "DEFAULT_VOCABULARY",
    "HierarchyLevel",
    "SchemaMap",
    "ImageInfo",
    "AnnotatedObject",
    "AnnotationSet",
    "parse_annotations",
    "load_annotations",
    "serialize_annotations",
    "to_coco",
    "is_converted",
]


class IndexBase(str, enum.Enum):
    ZERO = "zero_based"
    ONE = "one_based"

    @property
    def offset(self) -> int:
        return 0 if self is IndexBase.ONE else 1

    @classmethod
    def coerce(cls, value: "IndexBase | str") -> "IndexBase":
        try:
            return cls(value)
        except ValueError:
            raise RangeError(f"index base must be 'zero_based' or 'one_based', got {value!r}") from None


@dataclass(frozen=True, order=True)
class ToothId:
    quadrant: int
    in_quadrant: int

    def __post_init__(self) -> None:
        if not (isinstance(self.quadrant, int) and 1 <= self.quadrant <= 4):
            raise RangeError(f"quadrant must be in 1..4, got {self.quadrant!r}")
        if not (isinstance(self.in_quadrant, int) and 1 <= self.in_quadrant <= 8):
            raise RangeError(f"in-quadrant tooth number must be in 1..8, got {self.in_quadrant!r}")

    @property
    def global_id(self) -> int:
        return to_global(self)


def to_global(t: ToothId) -> int:
    return (t.quadrant - 1) * 8 + t.in_quadrant


def from_global(g: int) -> ToothId:
    if isinstance(g, bool) or not isinstance(g, int) or not 1 <= g <= 32:
        raise RangeError(f"global tooth id must be an integer in 1..32, got {g!r}")
    q, e = divmod(g - 1, 8)
    return ToothId(q + 1, e + 1)


def to_fdi(t: ToothId, index_base: IndexBase | str = IndexBase.ONE) -> str:
    off = IndexBase.coerce(index_base).offset
    return f"{t.quadrant - off}{t.in_quadrant - off}"


def parse_fdi(code: str | int, index_base: IndexBase | str = IndexBase.ONE) -> ToothId:
    """Inverse of :func:`to_fdi`. Integers such as ``48`` are accepted too."""
    text = f"{code:02d}" if isinstance(code, int) and not isinstance(code, bool) else str(code)
    if len(text) != 2 or not text.isdigit():
        raise RangeError(f"FDI code must be two digits, got {code!r}")
    off = IndexBase.coerce(index_base).offset
    return ToothId(int(text[0]) + off, int(text[1]) + off)


@dataclass(frozen=True)
class DiseaseLabel:
    id: int
    name: str

    @property
    def key(self) -> str:
        return normalize_name(self.name)


def normalize_name(name: str) -> str:
    return "_".join(name.casefold().split())


@dataclass(frozen=True)
class Vocabulary:
    """Disease labels with 1-based ids. Names match case-insensitively."""

    labels: tuple[DiseaseLabel, ...]

    def __post_init__(self) -> None:
        ids = [lab.id for lab in self.labels]
        if len(set(ids)) != len(ids):
            raise RangeError(f"duplicate disease ids in vocabulary: {sorted(ids)}")
        keys = [lab.key for lab in self.labels]
        if len(set(keys)) != len(keys):
            raise RangeError(f"duplicate disease names in vocabulary: {keys}")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "Vocabulary":
        return cls(tuple(DiseaseLabel(i, n) for i, n in enumerate(names, start=1)))

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "Vocabulary":
        return cls(tuple(DiseaseLabel(int(r["id"]), str(r["name"])) for r in records))

    def by_id(self, disease_id: int) -> DiseaseLabel:
        for lab in self.labels:
            if lab.id == disease_id:
                return lab
        raise RangeError(f"disease id {disease_id!r} not in vocabulary {[lab.id for lab in self.labels]}")

    def by_name(self, name: str) -> DiseaseLabel:
        key = normalize_name(name)
        for lab in self.labels:
            if lab.key == key:
                return lab
        raise RangeError(f"disease {name!r} not in vocabulary {[lab.name for lab in self.labels]}")

    def __contains__(self, item: object) -> bool:
        if isinstance(item, DiseaseLabel):
            return item in self.labels
        if isinstance(item, str):
            return any(lab.key == normalize_name(item) for lab in self.labels)
        return False

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def to_records(self) -> list[dict[str, Any]]:
        return [{"id": lab.id, "name": lab.name} for lab in self.labels]


# challenge release order; configuration, overridable per run
DEFAULT_VOCABULARY = Vocabulary.from_names(["Impacted", "Caries", "Periapical Lesion", "Deep Caries"])


class HierarchyLevel(enum.IntEnum):
    QUADRANT = 1
    ENUMERATION = 2
    DISEASE = 3


@dataclass(frozen=True)
class SchemaMap:
    """Raw field names for the three category levels."""

    quadrant_field: str = "category_id_1"
    enumeration_field: str = "category_id_2"
    disease_field: str = "category_id_3"
    quadrant_categories: str = "categories_1"
    enumeration_categories: str = "categories_2"
    disease_categories: str = "categories_3"

    @classmethod
    def from_mapping(cls, data: Mapping[str, str] | None) -> "SchemaMap":
        if not data:
            return cls()
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise RangeError(f"unknown schema map keys: {sorted(unknown)}")
        return cls(**data)

    def field_for(self, level: HierarchyLevel) -> str:
        return (self.quadrant_field, self.enumeration_field, self.disease_field)[level - 1]

    def categories_for(self, level: HierarchyLevel) -> str:
        return (self.quadrant_categories, self.enumeration_categories, self.disease_categories)[level - 1]


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    width: int
    height: int


Ring = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class AnnotatedObject:
    id: int
    image_id: int
    bbox: BBox
    polygon: tuple[Ring, ...] = ()
    quadrant: int | None = None
    enumeration: int | None = None
    disease: int | None = None

    @property
    def tooth(self) -> ToothId | None:
        if self.quadrant is None or self.enumeration is None:
            return None
        return ToothId(self.quadrant, self.enumeration)


@dataclass(frozen=True)
class AnnotationSet:
    images: tuple[ImageInfo, ...]
    objects: tuple[AnnotatedObject, ...]
    hierarchy_level: HierarchyLevel
    vocabulary: Vocabulary = DEFAULT_VOCABULARY
    _image_index: dict[int, ImageInfo] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index = {im.id: im for im in self.images}
        if len(index) != len(self.images):
            raise IntegrityError("duplicate image ids in annotation set")
        object.__setattr__(self, "_image_index", index)
        for obj in self.objects:
            if obj.image_id not in index:
                raise IntegrityError(f"object {obj.id} references unknown image id {obj.image_id}")

    def image(self, image_id: int) -> ImageInfo:
        try:
            return self._image_index[image_id]
        except KeyError:
            raise IntegrityError(f"unknown image id {image_id}") from None

    def objects_for(self, image_id: int) -> list[AnnotatedObject]:
        return [o for o in self.objects if o.image_id == image_id]


# --------------------------------------------------------------------- parsing


def load_annotations(path, id_base: IndexBase | str = IndexBase.ZERO, schema: SchemaMap | None = None,
                     vocabulary: Vocabulary | None = None) -> AnnotationSet:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_annotations(text, id_base, schema=schema, vocabulary=vocabulary)


def _decode(document: str | bytes | Mapping[str, Any]) -> Mapping[str, Any]:
    if isinstance(document, Mapping):
        return document
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(data, dict):
        raise ParseError("top level must be an object", "$")
    return data


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer():
        raise ParseError(f"expected an integer, got {value!r}", where)
    return int(value)


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected a number, got {value!r}", where)
    if not math.isfinite(value):
        raise ParseError(f"non-finite coordinate {value!r}", where)
    return float(value)


def _parse_rings(seg: Any, where: str, width: int, height: int) -> tuple[Ring, ...]:
    if seg is None or seg == []:
        return ()
    if not isinstance(seg, list):
        raise ParseError("segmentation must be a list of polygons (RLE is not supported)", where)
    if seg and all(isinstance(v, (int, float)) for v in seg):
        seg = [seg]
    rings = []
    for r, flat in enumerate(seg):
        loc = f"{where}[{r}]"
        if not isinstance(flat, list) or len(flat) % 2:
            raise ParseError("polygon ring must be a flat list of x,y pairs", loc)
        coords = [_as_number(v, loc) for v in flat]
        rings.append(tuple(
            (min(max(coords[i], 0.0), float(width)), min(max(coords[i + 1], 0.0), float(height)))
            for i in range(0, len(coords), 2)
        ))
    return tuple(rings)


def _ring_bbox(rings: Sequence[Ring]) -> BBox:
    xs = [p[0] for ring in rings for p in ring]
    ys = [p[1] for ring in rings for p in ring]
    return BBox.from_corners(min(xs), min(ys), max(xs), max(ys))


def parse_annotations(
    document: str | bytes | Mapping[str, Any],
    id_base: IndexBase | str = IndexBase.ZERO,
    *,
    schema: SchemaMap | None = None,
    vocabulary: Vocabulary | None = None,
) -> AnnotationSet:
    """Parse a raw challenge-style annotation document.

    Category values are shifted to 1-based according to ``id_base``. The
    hierarchy level comes from the declared category arrays; when none are
    declared it is inferred from the fields the objects carry. Disease
    names are taken from the document's disease categories when present,
    otherwise from ``vocabulary`` (default :data:`DEFAULT_VOCABULARY`).
    """
    schema = schema or SchemaMap()
    off = IndexBase.coerce(id_base).offset
    data = _decode(document)

    raw_images = data.get("images")
    if not isinstance(raw_images, list):
        raise ParseError("missing 'images' array", "$.images")
    images = []
    for i, im in enumerate(raw_images):
        loc = f"$.images[{i}]"
        if not isinstance(im, dict):
            raise ParseError("image entry must be an object", loc)
        try:
            images.append(ImageInfo(
                id=_as_int(im["id"], f"{loc}.id"),
                file_name=str(im.get("file_name", "")),
                width=_as_int(im["width"], f"{loc}.width"),
                height=_as_int(im["height"], f"{loc}.height"),
            ))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", loc) from None
        if images[-1].width < 1 or images[-1].height < 1:
            raise RangeError(f"{loc}: image size must be positive")
    image_index = {im.id: im for im in images}
    if len(image_index) != len(images):
        raise IntegrityError("duplicate image ids in 'images'")

    raw_objects = data.get("annotations", [])
    if not isinstance(raw_objects, list):
        raise ParseError("'annotations' must be an array", "$.annotations")

    declared = [lvl for lvl in HierarchyLevel if isinstance(data.get(schema.categories_for(lvl)), list)]
    if declared:
        level = max(declared)
    else:
        present = [lvl for lvl in HierarchyLevel
                   if any(isinstance(o, dict) and schema.field_for(lvl) in o for o in raw_objects)]
        if not present:
            raise ParseError("cannot infer hierarchy level: no category arrays or category fields", "$")
        level = max(present)

    disease_cats = data.get(schema.disease_categories)
    if isinstance(disease_cats, list) and disease_cats:
        try:
            vocab = Vocabulary(tuple(
                DiseaseLabel(_as_int(c["id"], f"$.{schema.disease_categories}[{k}].id") + off, str(c["name"]))
                for k, c in enumerate(disease_cats)
            ))
        except (KeyError, TypeError):
            raise ParseError("disease categories need 'id' and 'name'", f"$.{schema.disease_categories}") from None
    else:
        vocab = vocabulary or DEFAULT_VOCABULARY
    disease_ids = {lab.id for lab in vocab}

    objects = []
    for i, ob in enumerate(raw_objects):
        loc = f"$.annotations[{i}]"
        if not isinstance(ob, dict):
            raise ParseError("annotation entry must be an object", loc)
        if "image_id" not in ob:
            raise ParseError("missing field 'image_id'", loc)
        image_id = _as_int(ob["image_id"], f"{loc}.image_id")
        obj_id = _as_int(ob.get("id", i + 1), f"{loc}.id")
        if image_id not in image_index:
            raise IntegrityError(f"object {obj_id} ({loc}) references unknown image id {image_id}")
        img = image_index[image_id]

        cats: dict[HierarchyLevel, int] = {}
        for lvl in HierarchyLevel:
            key = schema.field_for(lvl)
            if lvl <= level:
                if key not in ob:
                    raise ParseError(f"missing category field {key!r} required at level {level.name.lower()}", loc)
                cats[lvl] = _as_int(ob[key], f"{loc}.{key}") + off
        q = cats.get(HierarchyLevel.QUADRANT)
        e = cats.get(HierarchyLevel.ENUMERATION)
        d = cats.get(HierarchyLevel.DISEASE)
        if q is not None and not 1 <= q <= 4:
            raise RangeError(f"object {obj_id} ({loc}): quadrant {q - off} out of range for {IndexBase.coerce(id_base).value}")
        if e is not None and not 1 <= e <= 8:
            raise RangeError(f"object {obj_id} ({loc}): enumeration {e - off} out of range for {IndexBase.coerce(id_base).value}")
        if d is not None and d not in disease_ids:
            raise RangeError(f"object {obj_id} ({loc}): disease {d - off} not in vocabulary")

        rings = _parse_rings(ob.get("segmentation"), f"{loc}.segmentation", img.width, img.height)
        if "bbox" in ob:
            raw_box = ob["bbox"]
            if not isinstance(raw_box, list) or len(raw_box) != 4:
                raise ParseError("bbox must be [x, y, w, h]", f"{loc}.bbox")
            vals = [_as_number(v, f"{loc}.bbox") for v in raw_box]
            if vals[2] < 0 or vals[3] < 0:
                raise RangeError(f"object {obj_id} ({loc}): negative bbox size")
            box = BBox(*vals)
        elif rings and any(rings):
            box = _ring_bbox(rings)
        else:
            raise ParseError("object has neither bbox nor segmentation", loc)
        objects.append(AnnotatedObject(
            id=obj_id, image_id=image_id, bbox=clamp_box(box, img.width, img.height),
            polygon=rings, quadrant=q, enumeration=e, disease=d,
        ))

    return AnnotationSet(tuple(images), tuple(objects), level, vocab)


# ----------------------------------------------------------------- serializing


def _flat_rings(rings: Sequence[Ring]) -> list[list[float]]:
    return [[c for p in ring for c in p] for ring in rings]


def _image_record(im: ImageInfo) -> dict[str, Any]:
    return {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}


def serialize_annotations(
    aset: AnnotationSet,
    id_base: IndexBase | str = IndexBase.ZERO,
    schema: SchemaMap | None = None,
) -> dict[str, Any]:
    """Emit the raw challenge layout; ``parse_annotations`` reads it back unchanged."""
    schema = schema or SchemaMap()
    off = IndexBase.coerce(id_base).offset
    doc: dict[str, Any] = {"images": [_image_record(im) for im in aset.images], "annotations": []}
    for ob in aset.objects:
        rec: dict[str, Any] = {
            "id": ob.id,
            "image_id": ob.image_id,
            "bbox": ob.bbox.to_list(),
            "area": ob.bbox.area,
            "iscrowd": 0,
            "segmentation": _flat_rings(ob.polygon),
        }
        for lvl, value in zip(HierarchyLevel, (ob.quadrant, ob.enumeration, ob.disease)):
            if lvl <= aset.hierarchy_level:
                rec[schema.field_for(lvl)] = value - off
        doc["annotations"].append(rec)
    if aset.hierarchy_level >= HierarchyLevel.QUADRANT:
        doc[schema.quadrant_categories] = [{"id": q - off, "name": str(q)} for q in range(1, 5)]
    if aset.hierarchy_level >= HierarchyLevel.ENUMERATION:
        doc[schema.enumeration_categories] = [{"id": e - off, "name": str(e)} for e in range(1, 9)]
    if aset.hierarchy_level >= HierarchyLevel.DISEASE:
        doc[schema.disease_categories] = [{"id": lab.id - off, "name": lab.name} for lab in aset.vocabulary]
    return doc


CONVERTED_MARKER = "dentexfuse_label_type"


def is_converted(document: Mapping[str, Any]) -> bool:
    info = document.get("info")
    return isinstance(info, dict) and CONVERTED_MARKER in info


def to_coco(aset: AnnotationSet, diseases_only: bool = False) -> dict[str, Any]:
    """Standard single-category COCO detection document.

    Enumeration-level sets get categories 1..32 (global tooth ids),
    quadrant-level sets 1..4. With ``diseases_only`` the disease id is the
    sole category and the tooth identity is discarded.
    """
    if diseases_only:
        if aset.hierarchy_level < HierarchyLevel.DISEASE:
            raise RangeError("diseases-only conversion needs a disease-level annotation set")
        label_type = "disease"
        categories = aset.vocabulary.to_records()
        category_of = lambda ob: ob.disease  # noqa: E731
    elif aset.hierarchy_level >= HierarchyLevel.ENUMERATION:
        label_type = "enumeration"
        categories = [{"id": g, "name": to_fdi(from_global(g))} for g in range(1, 33)]
        category_of = lambda ob: to_global(ob.tooth)  # noqa: E731
    else:
        label_type = "quadrant"
        categories = [{"id": q, "name": str(q)} for q in range(1, 5)]
        category_of = lambda ob: ob.quadrant  # noqa: E731

    annotations = []
    for ob in aset.objects:
        annotations.append({
            "id": ob.id,
            "image_id": ob.image_id,
            "category_id": category_of(ob),
            "bbox": ob.bbox.to_list(),
            "area": ob.bbox.area,
            "iscrowd": 0,
            "segmentation": _flat_rings(ob.polygon),
        })
    return {
        "info": {CONVERTED_MARKER: label_type},
        "images": [_image_record(im) for im in aset.images],
        "annotations": annotations,
        "categories": categories,
    }
