"""Stage 3: sectioning.

Claims are partitioned into at most four sections, one per category, in
a fixed priority order (Temporal 0, Geographic 1, Entity 2, Contextual
3).  Each claim lands in exactly one section: the one for its assigned
category.  A claim whose text also matches other categories gets a
cross-reference from its home section to each such section that exists.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import cues
from .planner import Claim, ClaimCategory, VerificationPlan

SECTION_PRIORITY: dict[ClaimCategory, int] = {
    ClaimCategory.TEMPORAL: 0,
    ClaimCategory.GEOGRAPHIC: 1,
    ClaimCategory.ENTITY: 2,
    ClaimCategory.CONTEXTUAL: 3,
}


@dataclass(frozen=True)
class Section:
    section_id: str
    category: ClaimCategory
    priority: int
    claim_ids: tuple[str, ...]
    cross_refs: tuple[tuple[str, str], ...] = ()

    def as_dict(self) -> dict:
        return {
            "section_id": self.section_id,
            "category": self.category.value,
            "priority": self.priority,
            "claim_ids": list(self.claim_ids),
            "cross_refs": [list(ref) for ref in self.cross_refs],
        }


def section_id_for(category: ClaimCategory) -> str:
    return f"sec-{category.value.lower()}"


def matching_categories(text: str) -> list[ClaimCategory]:
    """Every cue-backed category the text matches, in precedence order.

    Contextual is a fallback, not a cue match, so it never appears here.
    """
    matched: list[ClaimCategory] = []
    if cues.find_dates(text) or cues.find_times(text):
        matched.append(ClaimCategory.TEMPORAL)
    if cues.find_coords(text) or cues.find_places(text):
        matched.append(ClaimCategory.GEOGRAPHIC)
    if (
        cues.find_handles(text)
        or cues.find_bylines(text)
        or cues.find_domains(text)
        or cues.title_case_phrases(text)
    ):
        matched.append(ClaimCategory.ENTITY)
    return matched


def section_claims(plan: VerificationPlan) -> list[Section]:
    """Partition plan claims into priority-ordered sections."""
    grouped: dict[ClaimCategory, list[Claim]] = {}
    for claim in plan.claims:
        grouped.setdefault(claim.category, []).append(claim)
    present = sorted(grouped, key=SECTION_PRIORITY.__getitem__)
    sections: list[Section] = []
    for category in present:
        claims = grouped[category]
        refs: list[tuple[str, str]] = []
        for claim in claims:
            for other in matching_categories(claim.text):
                if other is not category and other in grouped:
                    refs.append((claim.claim_id, section_id_for(other)))
        sections.append(
            Section(
                section_id=section_id_for(category),
                category=category,
                priority=SECTION_PRIORITY[category],
                claim_ids=tuple(c.claim_id for c in claims),
                cross_refs=tuple(refs),
            )
        )
    return sections
