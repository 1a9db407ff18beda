"""Stage 2: verification planning.

Turns case context plus Stage 1 output into a list of checkable claims.
Claim candidates come from the multimodal provider; categorization and
tool routing are local and rule-based so the same inputs always produce
the same plan.

Categories are assigned by first match in a fixed precedence order:
Temporal (any date or clock time cue), Geographic (any coordinate or
place cue), Entity (any handle, byline, domain, or proper-name cue),
Contextual otherwise.

Tool routing is a fixed category table.  Provider-suggested tools may
extend a claim's tool set but can never remove a routed tool; unknown
suggestions are ignored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from . import cues
from .errors import VeriflowError

if TYPE_CHECKING:
    from .case_ingest import CasePackage
    from .media import ImageAnalysis, VideoAnalysis

PLAN_SCHEMA_VERSION = 1


class EmptyAnalyses(VeriflowError):
    """Planning was attempted without any Stage 1 media analysis."""


class PlanInvariantViolation(VeriflowError):
    """A built plan failed an internal consistency check."""


class ClaimCategory(enum.Enum):
    TEMPORAL = "Temporal"
    GEOGRAPHIC = "Geographic"
    ENTITY = "Entity"
    CONTEXTUAL = "Contextual"


class ToolKind(enum.Enum):
    KEYWORD_SEARCH = "KeywordSearch"
    REVERSE_IMAGE_SEARCH = "ReverseImageSearch"
    VERIFIED_NEWS_5W = "VerifiedNews5W"
    METADATA_ANALYSIS = "MetadataAnalysis"
    FORENSIC_CHECK = "ForensicCheck"
    FACT_CHECK_LOOKUP = "FactCheckLookup"


ROUTING: dict[ClaimCategory, tuple[ToolKind, ...]] = {
    ClaimCategory.TEMPORAL: (
        ToolKind.METADATA_ANALYSIS,
        ToolKind.VERIFIED_NEWS_5W,
        ToolKind.KEYWORD_SEARCH,
    ),
    ClaimCategory.GEOGRAPHIC: (
        ToolKind.REVERSE_IMAGE_SEARCH,
        ToolKind.KEYWORD_SEARCH,
        ToolKind.VERIFIED_NEWS_5W,
    ),
    ClaimCategory.ENTITY: (
        ToolKind.KEYWORD_SEARCH,
        ToolKind.FACT_CHECK_LOOKUP,
        ToolKind.VERIFIED_NEWS_5W,
    ),
    ClaimCategory.CONTEXTUAL: (
        ToolKind.FACT_CHECK_LOOKUP,
        ToolKind.KEYWORD_SEARCH,
        ToolKind.FORENSIC_CHECK,
    ),
}


@dataclass(frozen=True)
class Claim:
    claim_id: str
    text: str
    source: str
    category: ClaimCategory
    tools: tuple[ToolKind, ...]

    def as_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "text": self.text,
            "source": self.source,
            "category": self.category.value,
            "tools": [tool.value for tool in self.tools],
        }


@dataclass(frozen=True)
class VerificationPlan:
    case_id: str
    claims: tuple[Claim, ...]
    inconsistencies: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "plan_schema": PLAN_SCHEMA_VERSION,
            "case_id": self.case_id,
            "claims": [claim.as_dict() for claim in self.claims],
            "inconsistencies": list(self.inconsistencies),
        }


def categorize_claim(text: str) -> ClaimCategory:
    """Assign a category by cue precedence: Temporal, Geographic, Entity,
    then Contextual as the fallback."""
    if cues.find_dates(text) or cues.find_times(text):
        return ClaimCategory.TEMPORAL
    if cues.find_coords(text) or cues.find_places(text):
        return ClaimCategory.GEOGRAPHIC
    if (
        cues.find_handles(text)
        or cues.find_bylines(text)
        or cues.find_domains(text)
        or cues.title_case_phrases(text)
    ):
        return ClaimCategory.ENTITY
    return ClaimCategory.CONTEXTUAL


def route_tools(
    category: ClaimCategory, suggested: Iterable[str] = ()
) -> tuple[ToolKind, ...]:
    """Tools for a claim: the fixed routing for its category, optionally
    extended by recognized suggestions.  Never smaller than the routing."""
    tools = list(ROUTING[category])
    for name in suggested:
        try:
            kind = ToolKind(name)
        except ValueError:
            continue
        if kind not in tools:
            tools.append(kind)
    return tuple(tools)


def claim_extraction_payload(
    case: "CasePackage", analyses: Sequence["VideoAnalysis | ImageAnalysis"]
) -> bytes:
    """Canonical request payload for provider claim extraction.

    Pulls together every text surface of the case: captions, posts,
    articles, clues, overlay readings, and frame narratives.
    """
    overlays = []
    descriptions = []
    for analysis in analyses:
        for desc in getattr(analysis, "descriptions", ()):
            descriptions.append(
                {
                    "asset_id": analysis.asset_id,
                    "t_start_s": desc.t_start_s,
                    "t_end_s": desc.t_end_s,
                    "text": desc.text,
                }
            )
            for overlay in desc.overlays:
                overlays.append(
                    {
                        "asset_id": analysis.asset_id,
                        "text": overlay.text,
                        "kind": overlay.kind.value,
                        "t_s": overlay.t_s,
                    }
                )
    payload = {
        "captions": list(case.context.captions),
        "posts": [
            {"platform": p.platform, "url": p.url, "text": p.text}
            for p in case.context.posts
        ],
        "articles": [
            {"url": a.url, "title": a.title or "", "text": a.text or ""}
            for a in case.context.articles
        ],
        "clues": list(case.context.clues),
        "overlays": overlays,
        "descriptions": descriptions,
    }
    from .gateway import canonical_json

    return canonical_json(payload).encode("utf-8")


def _find_inconsistencies(claims: Sequence[Claim]) -> list[str]:
    notes: list[str] = []
    dated = [(c.claim_id, cues.find_dates(c.text)[0]) for c in claims if cues.find_dates(c.text)]
    for i in range(len(dated)):
        for j in range(i + 1, len(dated)):
            id_a, date_a = dated[i]
            id_b, date_b = dated[j]
            if date_a != date_b:
                notes.append(
                    f"claims {id_a} and {id_b} state different dates: "
                    f"{cues.format_date_dmy(date_a)} vs {cues.format_date_dmy(date_b)}"
                )
    located = [(c.claim_id, cues.find_coords(c.text)[0]) for c in claims if cues.find_coords(c.text)]
    for i in range(len(located)):
        for j in range(i + 1, len(located)):
            id_a, (lat_a, lon_a) = located[i]
            id_b, (lat_b, lon_b) = located[j]
            distance = cues.haversine_km(lat_a, lon_a, lat_b, lon_b)
            if distance > 50.0:
                notes.append(
                    f"claims {id_a} and {id_b} place the event {distance:.0f} km apart"
                )
    return notes


def validate_plan(plan: VerificationPlan) -> None:
    """Raise PlanInvariantViolation when the plan is internally broken."""
    if not plan.claims:
        raise PlanInvariantViolation("plan contains no claims")
    seen: set[str] = set()
    for claim in plan.claims:
        if claim.claim_id in seen:
            raise PlanInvariantViolation(f"duplicate claim id {claim.claim_id}")
        seen.add(claim.claim_id)
        if not claim.tools:
            raise PlanInvariantViolation(f"claim {claim.claim_id} routed to zero tools")
        for tool in ROUTING[claim.category]:
            if tool not in claim.tools:
                raise PlanInvariantViolation(
                    f"claim {claim.claim_id} is missing routed tool {tool.value}"
                )


def build_plan(
    case: "CasePackage",
    analyses: Sequence["VideoAnalysis | ImageAnalysis"],
    gateway,
) -> VerificationPlan:
    """Stage 2 entry point.

    Provider failures during claim extraction propagate; planning cannot
    proceed on missing model output.
    """
    if not analyses:
        raise EmptyAnalyses("planning requires at least one media analysis")
    payload = claim_extraction_payload(case, analyses)
    seeds = gateway.extract_claims(payload)
    claims: list[Claim] = []
    seen_text: set[str] = set()
    for seed in seeds:
        normalized = cues.normalize_ws(seed.text).casefold()
        if not normalized or normalized in seen_text:
            continue
        seen_text.add(normalized)
        category = categorize_claim(seed.text)
        claims.append(
            Claim(
                claim_id=f"c{len(claims) + 1:02d}",
                text=cues.normalize_ws(seed.text),
                source=seed.source,
                category=category,
                tools=route_tools(category, seed.suggested_tools),
            )
        )
    plan = VerificationPlan(
        case_id=case.case_id,
        claims=tuple(claims),
        inconsistencies=tuple(_find_inconsistencies(claims)),
    )
    validate_plan(plan)
    return plan
