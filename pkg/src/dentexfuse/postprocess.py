"""Final-stage filtering of fused findings.

The run order is fixed by :func:`postprocess`: score threshold, then
duplicate suppression per (tooth, disease), then prior-knowledge rules,
then the policy for findings that never got a tooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

from .annotations import DiseaseLabel, IndexBase, ToothId, Vocabulary, to_fdi
from .errors import ConfigError, RangeError
from .geometry import BBox

__all__ = [
    "FusedFinding",
    "PriorRule",
    "IMPACTED_THIRD_MOLAR",
    "dedupe",
    "apply_priors",
    "threshold",
    "postprocess",
    "PostprocessReport",
    "rules_from_config",
]


@dataclass(frozen=True)
class FusedFinding:
    image_id: int
    disease: DiseaseLabel
    tooth: ToothId | None
    bbox: BBox
    score: float
    index_base: IndexBase = IndexBase.ONE

    @property
    def tooth_fdi(self) -> str | None:
        return None if self.tooth is None else to_fdi(self.tooth, self.index_base)

    @property
    def matched(self) -> bool:
        return self.tooth is not None


@dataclass(frozen=True)
class PriorRule:
    """Findings of ``disease`` must satisfy ``constraint`` on their tooth."""

    disease: str
    constraint: Callable[[ToothId], bool]
    description: str = ""

    def violated_by(self, finding: FusedFinding) -> bool:
        if finding.tooth is None or finding.disease.key != _key(self.disease):
            return False
        return not self.constraint(finding.tooth)


def _key(name: str) -> str:
    return "_".join(name.casefold().split())


def _in_quadrant(allowed: frozenset[int]) -> Callable[[ToothId], bool]:
    return lambda t: t.in_quadrant in allowed


IMPACTED_THIRD_MOLAR = PriorRule("impacted", _in_quadrant(frozenset({8})), "impacted => in_quadrant 8")


def rules_from_config(records: Iterable[Mapping[str, Any]], vocabulary: Vocabulary) -> list[PriorRule]:
    """Build rules from ``{"disease": name, "in_quadrant": [...], "quadrant": [...]}`` records."""
    rules = []
    for i, rec in enumerate(records):
        name = rec.get("disease")
        if not isinstance(name, str):
            raise ConfigError(f"prior rule #{i}: 'disease' must be a name")
        if name not in vocabulary:
            raise ConfigError(f"prior rule #{i}: unknown disease {name!r}; vocabulary is "
                              f"{[lab.name for lab in vocabulary]}")
        unknown = set(rec) - {"disease", "in_quadrant", "quadrant"}
        if unknown:
            raise ConfigError(f"prior rule #{i}: unknown keys {sorted(unknown)}")
        in_q = frozenset(int(v) for v in rec.get("in_quadrant", range(1, 9)))
        quads = frozenset(int(v) for v in rec.get("quadrant", range(1, 5)))
        if not in_q <= set(range(1, 9)) or not quads <= set(range(1, 5)):
            raise ConfigError(f"prior rule #{i}: tooth positions out of range")
        rules.append(PriorRule(
            name,
            lambda t, in_q=in_q, quads=quads: t.in_quadrant in in_q and t.quadrant in quads,
            f"{name} => in_quadrant {sorted(in_q)}, quadrant {sorted(quads)}",
        ))
    return rules


def threshold(findings: Sequence[FusedFinding], min_score: float) -> list[FusedFinding]:
    """Keep findings scoring strictly above ``min_score``."""
    if not 0.0 <= min_score <= 1.0:
        raise RangeError(f"min_score must be in [0, 1], got {min_score}")
    return [f for f in findings if f.score > min_score]


def dedupe(findings: Sequence[FusedFinding]) -> list[FusedFinding]:
    """One survivor per (tooth, disease): highest score, then larger box, then first seen.

    Findings without a tooth are never grouped. Survivors keep input order.
    """
    best: dict[tuple, int] = {}
    for i, f in enumerate(findings):
        if f.tooth is None:
            continue
        key = (f.image_id, f.tooth, f.disease.key)
        j = best.get(key)
        if j is None:
            best[key] = i
            continue
        cur = findings[j]
        if (f.score, f.bbox.area) > (cur.score, cur.bbox.area):
            best[key] = i
    keep = set(best.values())
    return [f for i, f in enumerate(findings) if f.tooth is None or i in keep]


def apply_priors(findings: Sequence[FusedFinding], rules: Sequence[PriorRule]) -> list[FusedFinding]:
    return [f for f in findings if not any(r.violated_by(f) for r in rules)]


@dataclass
class PostprocessReport:
    input: int = 0
    below_threshold: int = 0
    duplicates: int = 0
    prior_violations: int = 0
    unmatched_dropped: int = 0
    output: int = 0

    def add(self, other: "PostprocessReport") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def postprocess(
    findings: Sequence[FusedFinding],
    min_score: float = 0.0,
    rules: Sequence[PriorRule] = (IMPACTED_THIRD_MOLAR,),
    keep_unmatched: bool = False,
) -> tuple[list[FusedFinding], PostprocessReport]:
    report = PostprocessReport(input=len(findings))
    out = threshold(findings, min_score)
    report.below_threshold = len(findings) - len(out)
    n = len(out)
    out = dedupe(out)
    report.duplicates = n - len(out)
    n = len(out)
    out = apply_priors(out, rules)
    report.prior_violations = n - len(out)
    if not keep_unmatched:
        n = len(out)
        out = [f for f in out if f.matched]
        report.unmatched_dropped = n - len(out)
    report.output = len(out)
    return out, report
