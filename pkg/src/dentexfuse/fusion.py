"""Label matching: give each disease detection a tooth by weighted IoU voting.

Every tooth-detection source contributes a :class:`ToothDictionary`. For a
disease box ``d`` the tally of tooth ``t`` is the sum over sources holding
``t`` of ``weight * iou(d, box_t)``; the highest tally wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .annotations import DiseaseLabel, IndexBase, ToothId, from_global
from .errors import ConfigError, IntegrityError, RangeError
from .geometry import BBox, iou
from .postprocess import FusedFinding

__all__ = [
    "DEFAULT_WEIGHTS",
    "ToothEntry",
    "ToothDictionary",
    "DiseaseDetection",
    "MatchResult",
    "build_dictionary",
    "vote_tooth",
    "fuse_image",
]

DEFAULT_WEIGHTS = {"detector": 2.0, "segmenter": 1.0}


@dataclass(frozen=True)
class ToothEntry:
    bbox: BBox
    score: float | None = None

    @property
    def effective_score(self) -> float:
        return 1.0 if self.score is None else self.score


@dataclass(frozen=True)
class ToothDictionary:
    source_id: str
    weight: float
    entries: Mapping[int, ToothEntry]
    kind: str = "detector"

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ConfigError(f"source {self.source_id!r}: weight must be > 0, got {self.weight}")
        for g in self.entries:
            from_global(g)


def build_dictionary(
    source_id: str,
    records: Iterable[tuple[int, BBox, float | None]],
    weight: float | None = None,
    kind: str = "detector",
) -> ToothDictionary:
    """Collapse ``(global_id, box, score)`` records to one entry per tooth.

    Keeps the highest score (missing counts as 1.0), ties going to the
    larger box, then to the earlier record.
    """
    if kind not in DEFAULT_WEIGHTS:
        raise ConfigError(f"source {source_id!r}: kind must be one of {sorted(DEFAULT_WEIGHTS)}, got {kind!r}")
    entries: dict[int, ToothEntry] = {}
    for g, box, score in records:
        from_global(g)
        if score is not None and not 0.0 <= score <= 1.0:
            raise RangeError(f"source {source_id!r}: tooth {g} score {score} outside [0, 1]")
        new = ToothEntry(box, score)
        cur = entries.get(g)
        if cur is None or (new.effective_score, box.area) > (cur.effective_score, cur.bbox.area):
            entries[g] = new
    return ToothDictionary(source_id, DEFAULT_WEIGHTS[kind] if weight is None else float(weight),
                           dict(sorted(entries.items())), kind)


@dataclass(frozen=True)
class DiseaseDetection:
    image_id: int
    disease: DiseaseLabel
    bbox: BBox
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise RangeError(f"disease detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class MatchResult:
    detection: DiseaseDetection
    tooth: ToothId | None
    vote_tally: dict[int, float] = field(default_factory=dict)

    @property
    def matched(self) -> bool:
        return self.tooth is not None


def vote_tooth(d: DiseaseDetection, dicts: Sequence[ToothDictionary]) -> MatchResult:
    """Weighted IoU vote; ties go to the higher summed entry score, then the lower id."""
    if not dicts:
        raise ConfigError("label matching needs at least one tooth dictionary")
    tally: dict[int, float] = {}
    score_sum: dict[int, float] = {}
    for src in dicts:
        for g, entry in src.entries.items():
            overlap = iou(d.bbox, entry.bbox)
            tally[g] = tally.get(g, 0.0) + src.weight * overlap
            if overlap > 0:
                score_sum[g] = score_sum.get(g, 0.0) + entry.effective_score
    tally = dict(sorted(tally.items()))
    best = max(tally, key=lambda g: (tally[g], score_sum.get(g, 0.0), -g), default=None)
    if best is None or tally[best] <= 0.0:
        return MatchResult(d, None, tally)
    return MatchResult(d, from_global(best), tally)


def fuse_image(
    diseases: Sequence[DiseaseDetection],
    dicts: Sequence[ToothDictionary],
    index_base: IndexBase | str = IndexBase.ONE,
) -> list[FusedFinding]:
    """One finding per detection, in input order; unmatched ones carry ``tooth=None``."""
    if not diseases:
        return []
    ids = {d.image_id for d in diseases}
    if len(ids) > 1:
        raise IntegrityError(f"fuse_image got detections from several images: {sorted(ids)}")
    base = IndexBase.coerce(index_base)
    out = []
    for d in diseases:
        m = vote_tooth(d, dicts)
        out.append(FusedFinding(d.image_id, d.disease, m.tooth, d.bbox, d.score, base))
    return out
