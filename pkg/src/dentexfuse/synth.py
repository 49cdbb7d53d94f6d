"""Deterministic synthetic cases with known ground truth.

Teeth are axis-aligned rectangles on two shallow arcs: the upper row holds
quadrants 1 and 2 (quadrant 1 on the image's left), the lower row holds
quadrants 4 and 3. Every tooth occupies its own column slot so rectangles
never overlap.

Randomness comes from numpy's counter-based Philox bit generator. Each
(seed, image index, stream) triple gets its own key through
``SeedSequence(seed, spawn_key=(image_index, stream))``, so streams are
independent of each other and of the order in which they are drawn.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import (
    DEFAULT_VOCABULARY,
    AnnotatedObject,
    AnnotationSet,
    HierarchyLevel,
    ImageInfo,
    IndexBase,
    ToothId,
    Vocabulary,
    from_global,
    serialize_annotations,
    to_global,
)
from .errors import CapacityError, RangeError
from .formats import PredictionRecord, dump_crop_frames, dump_predictions, write_json_atomic
from .geometry import BBox, CropFrame, clamp_box
from .rasterize import OTHER_QUADRANT, LabelMask, crop_mask, rasterize_objects, resize_mask, write_mask

__all__ = ["SynthSpec", "SynthCase", "tooth_layout", "generate_case", "generate_dataset", "write_dataset"]

DETECTOR = "detector"
WHOLE_SEGMENTER = "whole_segmenter"
QUADRANT_SEGMENTER = "quadrant_segmenter"

_STREAMS = {"detector": 1, "whole_segmenter": 2, "quadrant_segmenter": 3, "disease": 4}


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    image_size: tuple[int, int] = (1024, 512)
    teeth_present: tuple[int, ...] = tuple(range(1, 33))
    jitter: float = 0.0
    drop_rate: float = 0.0
    false_positive_rate: float = 0.0
    disease_plan: tuple[tuple[int, str], ...] = ()
    crop_size: tuple[int, int] | None = None  # None keeps quadrant crops at native size

    def __post_init__(self) -> None:
        object.__setattr__(self, "teeth_present", tuple(sorted(set(int(g) for g in self.teeth_present))))
        object.__setattr__(self, "disease_plan", tuple((int(g), str(d)) for g, d in self.disease_plan))
        for g in self.teeth_present:
            from_global(g)
        for name in ("drop_rate", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"{name} must be in [0, 1], got {v}")
        if self.jitter < 0:
            raise RangeError(f"jitter must be >= 0, got {self.jitter}")
        missing = [g for g, _ in self.disease_plan if g not in self.teeth_present]
        if missing:
            raise RangeError(f"disease plan names teeth that are not present: {missing}")


@dataclass
class SynthCase:
    image: ImageInfo
    teeth: AnnotationSet  # enumeration level, every present tooth
    diseases: AnnotationSet  # disease level, one object per planned finding
    mask: LabelMask  # noiseless whole-image raster of the teeth
    box_predictions: dict[str, list[PredictionRecord]]
    whole_masks: dict[str, LabelMask]
    quadrant_masks: dict[str, dict[int, LabelMask]]
    crop_frames: dict[int, CropFrame]
    disease_predictions: list[PredictionRecord]


def _slot_column(t: ToothId) -> int:
    # quadrants 1 and 4 run from the image centre leftwards, 2 and 3 rightwards
    return 8 - t.in_quadrant if t.quadrant in (1, 4) else 7 + t.in_quadrant


def tooth_layout(image_size: tuple[int, int]) -> dict[int, BBox]:
    """Ground-truth rectangle for every global tooth id at this image size."""
    width, height = image_size
    margin = int(width * 0.04)
    slot = (width - 2 * margin) // 16
    tooth_w = slot - max(1, slot // 5)
    tooth_h = int(height * 0.25)
    depth = int(height * 0.05)
    if tooth_w < 2 or tooth_h < 2:
        raise CapacityError(f"cannot place 32 non-overlapping teeth in a {width}x{height} image")
    boxes = {}
    for g in range(1, 33):
        t = from_global(g)
        col = _slot_column(t)
        u = (col - 7.5) / 7.5
        lift = int(round(depth * (1.0 - u * u)))
        x = margin + col * slot + (slot - tooth_w) // 2
        y = int(height * 0.10) + lift if t.quadrant in (1, 2) else int(height * 0.60) - lift
        boxes[g] = BBox(float(x), float(y), float(tooth_w), float(tooth_h))
    return boxes


def _rng(seed: int, image_index: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(image_index, _STREAMS[stream]))
    return np.random.Generator(np.random.Philox(ss))


def _rect_ring(b: BBox) -> tuple[tuple[float, float], ...]:
    return ((b.x, b.y), (b.x2, b.y), (b.x2, b.y2), (b.x, b.y2))


def _jitter(rng: np.random.Generator, b: BBox, sigma: float, width: int, height: int) -> BBox:
    if sigma == 0:
        return b
    d = rng.normal(0.0, sigma, size=4)
    x1, y1, x2, y2 = b.x + d[0], b.y + d[1], b.x2 + d[2], b.y2 + d[3]
    return clamp_box(BBox.from_corners(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2)), width, height)


def _random_box(rng: np.random.Generator, like: BBox, width: int, height: int) -> BBox:
    x = rng.uniform(0, max(1.0, width - like.w))
    y = rng.uniform(0, max(1.0, height - like.h))
    return clamp_box(BBox(float(x), float(y), like.w, like.h), width, height)


def _quadrant_frames(layout: dict[int, BBox], width: int, height: int, image_id: int,
                     crop_size: tuple[int, int] | None) -> dict[int, CropFrame]:
    frames = {}
    for q in range(1, 5):
        boxes = [layout[to_global(ToothId(q, e))] for e in range(1, 9)]
        x1 = min(b.x for b in boxes)
        y1 = min(b.y for b in boxes)
        x2 = max(b.x2 for b in boxes)
        y2 = max(b.y2 for b in boxes)
        pad = int(0.02 * width)
        # reach past the midline so neighbouring-quadrant teeth appear as label 9
        crop = clamp_box(BBox.from_corners(x1 - pad, y1 - pad, x2 + pad, y2 + pad), width, height)
        crop = BBox(float(int(crop.x)), float(int(crop.y)), float(int(crop.w)), float(int(crop.h)))
        size = crop_size or (int(crop.w), int(crop.h))
        frames[q] = CropFrame(crop, (width, height), size)
    return frames


def generate_case(spec: SynthSpec, image_id: int = 1, image_index: int = 0,
                  vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> SynthCase:
    width, height = spec.image_size
    layout = tooth_layout(spec.image_size)
    image = ImageInfo(image_id, f"synth_{image_id:04d}.png", width, height)

    teeth_objs = []
    for k, g in enumerate(spec.teeth_present):
        t = from_global(g)
        b = layout[g]
        teeth_objs.append(AnnotatedObject(image_id * 1000 + k + 1, image_id, b, (_rect_ring(b),),
                                          quadrant=t.quadrant, enumeration=t.in_quadrant))
    teeth = AnnotationSet((image,), tuple(teeth_objs), HierarchyLevel.ENUMERATION, vocabulary)

    disease_objs = []
    for k, (g, name) in enumerate(spec.disease_plan):
        t = from_global(g)
        b = layout[g]
        disease_objs.append(AnnotatedObject(image_id * 1000 + 100 + k + 1, image_id, b, (_rect_ring(b),),
                                            quadrant=t.quadrant, enumeration=t.in_quadrant,
                                            disease=vocabulary.by_name(name).id))
    diseases = AnnotationSet((image,), tuple(disease_objs), HierarchyLevel.DISEASE, vocabulary)
    mask = rasterize_objects(teeth_objs, width, height)

    # detector: jittered boxes with scores, plus mislabelled false positives
    rng = _rng(spec.seed, image_index, DETECTOR)
    det = []
    for g in spec.teeth_present:
        dropped = rng.random() < spec.drop_rate
        box = _jitter(rng, layout[g], spec.jitter, width, height)
        score = float(rng.uniform(0.6, 1.0))
        if not dropped:
            det.append(PredictionRecord(image_id, box, g, round(score, 6), DETECTOR))
        if rng.random() < spec.false_positive_rate:
            wrong = int(rng.integers(1, 33))
            det.append(PredictionRecord(image_id, _random_box(rng, layout[g], width, height), wrong,
                                        round(float(rng.uniform(0.05, 0.5)), 6), DETECTOR))

    # segmenters rasterize jittered polygons of the surviving teeth
    def noisy_objects(stream: str) -> list[AnnotatedObject]:
        r = _rng(spec.seed, image_index, stream)
        out = []
        for ob in teeth_objs:
            dropped = r.random() < spec.drop_rate
            b = _jitter(r, ob.bbox, spec.jitter, width, height)
            if not dropped and b.area > 0:
                out.append(AnnotatedObject(ob.id, image_id, b, (_rect_ring(b),), ob.quadrant, ob.enumeration))
        return out

    whole = rasterize_objects(noisy_objects(WHOLE_SEGMENTER), width, height)
    frames = _quadrant_frames(layout, width, height, image_id, spec.crop_size)
    # one global raster, relabelled per quadrant (same result as rasterizing with each quadrant labeling)
    quad_full = rasterize_objects(noisy_objects(QUADRANT_SEGMENTER), width, height).labels
    quad_masks = {}
    for q, fr in frames.items():
        lut = np.zeros(33, dtype=np.uint8)
        for g in range(1, 33):
            t = from_global(g)
            lut[g] = t.in_quadrant if t.quadrant == q else OTHER_QUADRANT
        local = crop_mask(LabelMask(lut[quad_full]), fr.crop_box)
        if (local.width, local.height) != tuple(fr.crop_size):
            local = resize_mask(local, *fr.crop_size)
        quad_masks[q] = local

    rng = _rng(spec.seed, image_index, "disease")
    dis = []
    for g, name in spec.disease_plan:
        box = _jitter(rng, layout[g], spec.jitter, width, height)
        dis.append(PredictionRecord(image_id, box, vocabulary.by_name(name).id,
                                    round(float(rng.uniform(0.5, 1.0)), 6)))
    n_fp = int(rng.binomial(len(spec.teeth_present), spec.false_positive_rate)) if spec.teeth_present else 0
    for _ in range(n_fp):
        g = spec.teeth_present[int(rng.integers(0, len(spec.teeth_present)))]
        lab = vocabulary.labels[int(rng.integers(0, len(vocabulary)))]
        box = _jitter(rng, layout[g], max(spec.jitter, 1.0) * 3, width, height)
        dis.append(PredictionRecord(image_id, box, lab.id, round(float(rng.uniform(0.01, 0.6)), 6)))

    return SynthCase(
        image=image, teeth=teeth, diseases=diseases, mask=mask,
        box_predictions={DETECTOR: det},
        whole_masks={WHOLE_SEGMENTER: whole},
        quadrant_masks={QUADRANT_SEGMENTER: quad_masks},
        crop_frames=frames,
        disease_predictions=dis,
    )


@dataclass
class SynthDataset:
    spec: SynthSpec
    cases: list[SynthCase] = field(default_factory=list)

    @property
    def images(self) -> tuple[ImageInfo, ...]:
        return tuple(c.image for c in self.cases)

    def merged(self, which: str) -> AnnotationSet:
        sets = [getattr(c, which) for c in self.cases]
        level = sets[0].hierarchy_level if sets else HierarchyLevel.DISEASE
        vocab = sets[0].vocabulary if sets else DEFAULT_VOCABULARY
        return AnnotationSet(self.images, tuple(o for s in sets for o in s.objects), level, vocab)


def generate_dataset(spec: SynthSpec, n_images: int, plans: Sequence[Sequence[tuple[int, str]]] | None = None,
                     vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> SynthDataset:
    """``n_images`` cases sharing ``spec``; ``plans`` optionally gives a disease plan per image."""
    ds = SynthDataset(spec)
    for i in range(n_images):
        s = spec if plans is None else SynthSpec(**{**spec.__dict__, "disease_plan": tuple(plans[i])})
        ds.cases.append(generate_case(s, image_id=i + 1, image_index=i, vocabulary=vocabulary))
    return ds


def random_plan(rng: np.random.Generator, teeth: Sequence[int], vocabulary: Vocabulary = DEFAULT_VOCABULARY,
                max_findings: int = 4) -> list[tuple[int, str]]:
    """A disease plan that respects the impacted-third-molar prior."""
    plan = []
    for _ in range(int(rng.integers(0, max_findings + 1))):
        g = int(teeth[int(rng.integers(0, len(teeth)))])
        names = [lab.name for lab in vocabulary
                 if lab.key != "impacted" or from_global(g).in_quadrant == 8]
        name = names[int(rng.integers(0, len(names)))]
        if (g, name) not in plan:
            plan.append((g, name))
    return plan


def _draw_image(case: SynthCase, path: Path) -> None:
    from PIL import Image

    arr = np.full((case.image.height, case.image.width), 40, dtype=np.uint8)
    arr[case.mask.labels > 0] = 200
    Image.fromarray(arr).save(path)


def write_dataset(ds: SynthDataset, out_dir: str | os.PathLike, id_base: IndexBase | str = IndexBase.ZERO,
                  index_base: IndexBase | str = IndexBase.ONE, min_score: float = 0.0,
                  images: bool = True) -> Path:
    """Write every file a fuse/eval run needs and return the run-config path."""
    out = Path(out_dir)
    (out / "masks" / WHOLE_SEGMENTER).mkdir(parents=True, exist_ok=True)
    (out / "masks" / QUADRANT_SEGMENTER).mkdir(parents=True, exist_ok=True)
    write_json_atomic(out / "teeth.json", serialize_annotations(ds.merged("teeth"), id_base))
    write_json_atomic(out / "diseases_gt.json", serialize_annotations(ds.merged("diseases"), id_base))
    write_json_atomic(out / "detector.json",
                      dump_predictions(r for c in ds.cases for r in c.box_predictions[DETECTOR]))
    write_json_atomic(out / "disease_predictions.json",
                      dump_predictions(r for c in ds.cases for r in c.disease_predictions))
    frames = {(c.image.id, q): fr for c in ds.cases for q, fr in c.crop_frames.items()}
    write_json_atomic(out / "crop_frames.json", dump_crop_frames(frames))
    for c in ds.cases:
        write_mask(c.whole_masks[WHOLE_SEGMENTER], out / "masks" / WHOLE_SEGMENTER / f"{c.image.id}.png")
        for q, m in c.quadrant_masks[QUADRANT_SEGMENTER].items():
            write_mask(m, out / "masks" / QUADRANT_SEGMENTER / f"{c.image.id}_q{q}.png")
        if images:
            (out / "images").mkdir(exist_ok=True)
            _draw_image(c, out / "images" / c.image.file_name)
    vocab = ds.cases[0].diseases.vocabulary if ds.cases else DEFAULT_VOCABULARY
    config = {
        "images": "diseases_gt.json",
        "diseases": "disease_predictions.json",
        "index_base": IndexBase.coerce(index_base).value,
        "min_score": min_score,
        "connectivity": 8,
        "vocabulary": vocab.to_records(),
        "priors": [{"disease": "impacted", "in_quadrant": [8]}],
        "sources": [
            {"id": DETECTOR, "kind": "detector", "weight": 2.0, "predictions": "detector.json"},
            {"id": WHOLE_SEGMENTER, "kind": "segmenter", "weight": 1.0,
             "masks": f"masks/{WHOLE_SEGMENTER}", "mask_layout": "whole"},
            {"id": QUADRANT_SEGMENTER, "kind": "segmenter", "weight": 1.0,
             "masks": f"masks/{QUADRANT_SEGMENTER}", "mask_layout": "quadrant",
             "crop_frames": "crop_frames.json"},
        ],
    }
    write_json_atomic(out / "run.json", config)
    return out / "run.json"
