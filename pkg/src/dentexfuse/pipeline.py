"""Run configuration and the end-to-end fuse run.

A run reads disease detections plus one prediction input per tooth source,
builds a tooth dictionary per source and image, votes, postprocesses and
returns submission records together with a run report.

Sources come in three flavours, selected by which keys they set:

``predictions``
    a prediction file of boxes (whole-image pixels, or quadrant-local when
    ``crop_frames`` is given);
``masks`` with ``mask_layout: whole``
    ``<image_id>.png`` label masks with global tooth ids, possibly at a
    resized resolution;
``masks`` with ``mask_layout: quadrant``
    ``<image_id>_q<quadrant>.png`` quadrant masks (labels 1..8, 9 = other
    quadrant) restored through ``crop_frames``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .annotations import DEFAULT_VOCABULARY, ImageInfo, IndexBase, ToothId, Vocabulary, to_global
from .errors import ConfigError, IntegrityError, RangeError
from .evaluate import EvalConfig
from .formats import PredictionRecord, load_images, load_predictions, parse_crop_frames, read_json, submission_records
from .fusion import DEFAULT_WEIGHTS, DiseaseDetection, ToothDictionary, build_dictionary, fuse_image
from .geometry import CropFrame, clamp_box, rescale_box, restore_to_image
from .postprocess import FusedFinding, PostprocessReport, postprocess, rules_from_config
from .rasterize import OTHER_QUADRANT, largest_component_boxes, read_mask

__all__ = ["SourceConfig", "RunConfig", "load_config", "run_fuse", "FuseResult"]

log = logging.getLogger(__name__)

DEFAULT_PRIORS = ({"disease": "impacted", "in_quadrant": [8]},)


@dataclass(frozen=True)
class SourceConfig:
    id: str
    kind: str
    weight: float
    predictions: Path | None = None
    masks: Path | None = None
    mask_layout: str = "whole"
    crop_frames: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    images: Path
    diseases: Path
    sources: tuple[SourceConfig, ...]
    index_base: IndexBase = IndexBase.ONE
    min_score: float = 0.0
    priors: tuple[Mapping[str, Any], ...] = DEFAULT_PRIORS
    connectivity: int = 8
    vocabulary: Vocabulary = DEFAULT_VOCABULARY
    keep_unmatched: bool = False
    eval: EvalConfig = field(default_factory=EvalConfig)
    jobs: int = 1

    def validate(self) -> None:
        ids = [s.id for s in self.sources]
        if not ids:
            raise ConfigError("run configuration lists no tooth sources")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"source ids must be unique, got {ids}")
        if not 0.0 <= self.min_score <= 1.0:
            raise ConfigError(f"min_score must be in [0, 1], got {self.min_score}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        rules_from_config(self.priors, self.vocabulary)
        for path, what in [(self.images, "images document"), (self.diseases, "disease predictions")]:
            if not path.is_file():
                raise ConfigError(f"{what} not found: {path}")
        for s in self.sources:
            if s.kind not in DEFAULT_WEIGHTS:
                raise ConfigError(f"source {s.id!r}: kind must be one of {sorted(DEFAULT_WEIGHTS)}")
            if not s.weight > 0:
                raise ConfigError(f"source {s.id!r}: weight must be > 0, got {s.weight}")
            if (s.predictions is None) == (s.masks is None):
                raise ConfigError(f"source {s.id!r}: set exactly one of 'predictions' or 'masks'")
            if s.predictions is not None and not s.predictions.is_file():
                raise ConfigError(f"source {s.id!r}: prediction file not found: {s.predictions}")
            if s.masks is not None:
                if not s.masks.is_dir():
                    raise ConfigError(f"source {s.id!r}: mask directory not found: {s.masks}")
                if s.mask_layout not in ("whole", "quadrant"):
                    raise ConfigError(f"source {s.id!r}: mask_layout must be 'whole' or 'quadrant'")
                if s.mask_layout == "quadrant" and s.crop_frames is None:
                    raise ConfigError(f"source {s.id!r}: quadrant masks need a crop_frames sidecar")
            if s.crop_frames is not None and not s.crop_frames.is_file():
                raise ConfigError(f"source {s.id!r}: crop-frame sidecar not found: {s.crop_frames}")


def _read_config_file(path: Path) -> Mapping[str, Any]:
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    else:
        data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must be a mapping")
    return data


def load_config(path: str | os.PathLike, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a JSON or YAML run configuration; relative paths resolve against its directory.

    ``overrides`` replaces top-level keys (command-line flags).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    data = dict(_read_config_file(path))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = path.parent

    def p(value: Any) -> Path | None:
        return None if value is None else (base / str(value))

    known = {"images", "diseases", "sources", "index_base", "min_score", "priors", "connectivity",
             "vocabulary", "keep_unmatched", "eval", "jobs"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key in ("images", "diseases", "sources"):
        if key not in data:
            raise ConfigError(f"configuration is missing {key!r}")

    sources = []
    for i, raw in enumerate(data["sources"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise ConfigError(f"source #{i} needs an 'id'")
        extra = set(raw) - {"id", "kind", "weight", "predictions", "masks", "mask_layout", "crop_frames"}
        if extra:
            raise ConfigError(f"source {raw['id']!r}: unknown keys {sorted(extra)}")
        kind = raw.get("kind", "detector")
        if kind not in DEFAULT_WEIGHTS:
            raise ConfigError(f"source {raw['id']!r}: kind must be one of {sorted(DEFAULT_WEIGHTS)}")
        sources.append(SourceConfig(
            id=str(raw["id"]),
            kind=kind,
            weight=float(raw.get("weight", DEFAULT_WEIGHTS[kind])),
            predictions=p(raw.get("predictions")),
            masks=p(raw.get("masks")),
            mask_layout=raw.get("mask_layout", "whole"),
            crop_frames=p(raw.get("crop_frames")),
        ))
    try:
        vocab = Vocabulary.from_records(data["vocabulary"]) if "vocabulary" in data else DEFAULT_VOCABULARY
        index_base = IndexBase.coerce(data.get("index_base", "one_based"))
        eval_raw = dict(data.get("eval", {}))
        if "iou_thresholds" in eval_raw:
            eval_raw["iou_thresholds"] = tuple(eval_raw["iou_thresholds"])
        eval_cfg = EvalConfig(**eval_raw)
    except (RangeError, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(
        images=p(data["images"]),
        diseases=p(data["diseases"]),
        sources=tuple(sources),
        index_base=index_base,
        min_score=float(data.get("min_score", 0.0)),
        priors=tuple(data.get("priors", DEFAULT_PRIORS)),
        connectivity=int(data.get("connectivity", 8)),
        vocabulary=vocab,
        keep_unmatched=bool(data.get("keep_unmatched", False)),
        eval=eval_cfg,
        jobs=int(data.get("jobs", 1)),
    )
    cfg.validate()
    return cfg


@dataclass
class FuseResult:
    findings: list[FusedFinding]
    report: dict[str, Any]

    @property
    def submission(self) -> list[dict[str, Any]]:
        return submission_records(self.findings)


@dataclass
class _SourceData:
    config: SourceConfig
    records: dict[int, list[PredictionRecord]]
    frames: dict[tuple[int, int], CropFrame]


def _group(records: Sequence[PredictionRecord], images: Mapping[int, ImageInfo], what: str) -> dict[int, list]:
    out: dict[int, list] = {}
    unknown = sorted({r.image_id for r in records} - set(images))
    if unknown:
        raise IntegrityError(f"{what} references unknown image ids: {unknown}")
    for r in records:
        out.setdefault(r.image_id, []).append(r)
    return out


def _mask_entries(src: _SourceData, image: ImageInfo, connectivity: int, stats: dict[str, int]):
    cfg = src.config
    if cfg.mask_layout == "whole":
        path = cfg.masks / f"{image.id}.png"
        if not path.is_file():
            stats["missing_masks"] += 1
            return []
        mask = read_mask(path)
        out = []
        for label, box in largest_component_boxes(mask, connectivity).items():
            if not 1 <= label <= 32:
                stats["ignored_labels"] += 1
                continue
            if (mask.width, mask.height) != (image.width, image.height):
                box = rescale_box(box, (mask.width, mask.height), (image.width, image.height))
            out.append((label, clamp_box(box, image.width, image.height), None))
        return out

    out = []
    for q in range(1, 5):
        path = cfg.masks / f"{image.id}_q{q}.png"
        if not path.is_file():
            stats["missing_masks"] += 1
            continue
        frame = src.frames.get((image.id, q))
        if frame is None:
            raise IntegrityError(f"source {cfg.id!r}: no crop frame for image {image.id} quadrant {q}")
        mask = read_mask(path)
        if (mask.width, mask.height) != tuple(frame.crop_size):
            raise IntegrityError(f"source {cfg.id!r}: mask {path.name} is {mask.width}x{mask.height} "
                                 f"but its crop frame says {frame.crop_size[0]}x{frame.crop_size[1]}")
        for label, box in largest_component_boxes(mask, connectivity).items():
            if label == OTHER_QUADRANT:
                continue
            if not 1 <= label <= 8:
                stats["ignored_labels"] += 1
                continue
            out.append((to_global(ToothId(q, label)), restore_to_image(box, frame), None))
    return out


def _record_entries(src: _SourceData, image: ImageInfo):
    out = []
    for r in src.records.get(image.id, []):
        if not 1 <= r.category <= 32:
            raise RangeError(f"source {src.config.id!r}: tooth category {r.category} outside 1..32")
        box = r.bbox
        if src.frames:
            q = (r.category - 1) // 8 + 1
            frame = src.frames.get((image.id, q))
            if frame is None:
                raise IntegrityError(f"source {src.config.id!r}: no crop frame for image {image.id} quadrant {q}")
            box = restore_to_image(box, frame)
        else:
            box = clamp_box(box, image.width, image.height)
        out.append((r.category, box, r.score))
    return out


def run_fuse(config: RunConfig) -> FuseResult:
    """Fuse every image listed in ``config.images``; deterministic for any ``jobs``."""
    config.validate()
    images = load_images(config.images)
    index = {im.id: im for im in images}
    rules = rules_from_config(config.priors, config.vocabulary)

    disease_records = load_predictions(config.diseases)
    diseases_by_image = _group(disease_records, index, f"disease predictions {config.diseases}")
    sources = []
    for s in config.sources:
        records: dict[int, list[PredictionRecord]] = {}
        if s.predictions is not None:
            recs = [r for r in load_predictions(s.predictions) if r.source_id in (None, s.id)]
            records = _group(recs, index, f"source {s.id!r}")
        frames = parse_crop_frames(read_json(s.crop_frames), index, str(s.crop_frames)) if s.crop_frames else {}
        sources.append(_SourceData(s, records, frames))

    def one(image: ImageInfo):
        stats = {"missing_masks": 0, "ignored_labels": 0}
        dicts: list[ToothDictionary] = []
        for src in sources:
            if src.config.masks is not None:
                entries = _mask_entries(src, image, config.connectivity, stats)
            else:
                entries = _record_entries(src, image)
            dicts.append(build_dictionary(src.config.id, entries, src.config.weight, src.config.kind))
        detections = []
        for r in diseases_by_image.get(image.id, []):
            try:
                disease = config.vocabulary.by_id(r.category)
            except RangeError as exc:
                raise IntegrityError(f"disease predictions, image {image.id}: {exc}") from None
            detections.append(DiseaseDetection(
                image.id, disease, clamp_box(r.bbox, image.width, image.height),
                1.0 if r.score is None else r.score))
        fused = fuse_image(detections, dicts, config.index_base)
        kept, pp = postprocess(fused, config.min_score, rules, config.keep_unmatched)
        return kept, pp, stats, {d.source_id: len(d.entries) for d in dicts}, sum(f.matched for f in fused)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(one, images))
    else:
        results = [one(im) for im in images]

    findings: list[FusedFinding] = []
    totals = PostprocessReport()
    per_source = {s.id: 0 for s in config.sources}
    missing = ignored = matched = 0
    for kept, pp, stats, entries, n_matched in results:
        findings.extend(kept)
        totals.add(pp)
        missing += stats["missing_masks"]
        ignored += stats["ignored_labels"]
        matched += n_matched
        for sid, n in entries.items():
            per_source[sid] += n
    report = {
        "images": len(images),
        "detections": len(disease_records),
        "matched": matched,
        "unmatched": len(disease_records) - matched,
        "postprocess": totals.as_dict(),
        "tooth_entries_per_source": per_source,
        "missing_masks": missing,
        "ignored_mask_labels": ignored,
        "settings": {
            "index_base": config.index_base.value,
            "min_score": config.min_score,
            "connectivity": config.connectivity,
            "weights": {s.id: s.weight for s in config.sources},
            "keep_unmatched": config.keep_unmatched,
        },
    }
    log.info("fused %d image(s): %d detections, %d matched, %d emitted",
             len(images), len(disease_records), matched, len(findings))
    return FuseResult(findings, report)


def with_overrides(config: RunConfig, **changes: Any) -> RunConfig:
    cfg = replace(config, **{k: v for k, v in changes.items() if v is not None})
    cfg.validate()
    return cfg
