"""Stage 5: evidence aggregation.

Research output from all sections lands in one store, which re-scores
every item against the full corpus, detects conflicts, assigns
categories, and derives the case verdict.  Everything in here is a pure
function of the evidence set: merging is order-independent, so the same
corpus always finalizes to the same result no matter how many workers
produced it or in what order their batches arrived.

Confidence model: an item's confidence is

    w_r * reliability + w_c * (s + 1) / (s + c + 2)

where ``s`` counts independent supporting sources and ``c`` independent
contradicting sources for the same asserted fact, both measured in
distinct registered domains.  The corroboration term is a Laplace-
smoothed proportion, so zero evidence either way yields 1/2 rather than
a division by zero, and the result is clamped into [0, 1].

Two evidence items assert "the same fact" when they share a fact key:
the pair (claim, stance) or, when source context is present, a concrete
claim-scoped value such as an event date, a clock time, a place name, or
rounded coordinates.  Contradiction is narrower than mere difference:
unequal calendar dates, coordinates more than 50 km apart, or an
explicit Supports-versus-Contradicts split on the same claim.
"""

from __future__ import annotations

import datetime as dt
import enum
import threading
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

from . import cues
from .errors import VeriflowError

if TYPE_CHECKING:
    from .gateway import SearchResult
    from .planner import Claim
    from .researcher import SourceAssessment, SourceContext

CONFLICT_DISTANCE_KM = 50.0
GEO_KEY_DECIMALS = 4

EVIDENCE_SCHEMA_VERSION = 1


class Stance(enum.Enum):
    SUPPORTS = "Supports"
    CONTRADICTS = "Contradicts"
    RELATED = "Related"


class EvidenceCategory(enum.Enum):
    VERIFIED_FACT = "VerifiedFact"
    RELATED_INFORMATION = "RelatedInformation"
    DISPUTED_CLAIM = "DisputedClaim"


class VerdictStatus(enum.Enum):
    VERIFIED = "Verified"
    PARTIALLY_VERIFIED = "PartiallyVerified"
    INCONCLUSIVE = "Inconclusive"
    REFUTED = "Refuted"


@dataclass(frozen=True)
class ScoringParams:
    """Weights and thresholds for confidence and verdict derivation."""

    w_reliability: float = 0.5
    w_corroboration: float = 0.5
    verification_threshold: float = 0.7
    refute_margin: float = 0.2

    def __post_init__(self) -> None:
        for name in ("w_reliability", "w_corroboration", "verification_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")
        if self.refute_margin < 0.0:
            raise ValueError("refute_margin must be non-negative")


@dataclass(frozen=True)
class Evidence:
    """One finding tied to a source, a stance, and zero or more claims.

    ``claim_ids`` may be empty only for Related items (general findings
    not anchored to a specific claim).
    """

    evidence_id: str
    section_id: str
    claim_ids: tuple[str, ...]
    stance: Stance
    category: EvidenceCategory
    content: str
    source: "SearchResult"
    context: "SourceContext | None"
    assessment: "SourceAssessment"
    confidence: float
    step_id: str
    coverage_gap: bool = False

    def __post_init__(self) -> None:
        if not self.claim_ids and self.stance is not Stance.RELATED:
            raise ValueError("claim-less evidence must have Related stance")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")

    @property
    def domain(self) -> str:
        return cues.registered_domain(self.source.url)

    def as_dict(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "section_id": self.section_id,
            "claim_ids": list(self.claim_ids),
            "stance": self.stance.value,
            "category": self.category.value,
            "content": self.content,
            "source": self.source.as_dict(),
            "context": self.context.as_dict() if self.context else None,
            "assessment": self.assessment.as_dict(),
            "confidence": self.confidence,
            "step_id": self.step_id,
            "coverage_gap": self.coverage_gap,
        }


@dataclass(frozen=True)
class ConflictPair:
    """Two evidence items disagreeing on one claim, and on what."""

    evidence_a: str
    evidence_b: str
    claim_id: str
    reason: str  # "date", "location", or "stance"

    def as_dict(self) -> dict:
        return {
            "evidence_a": self.evidence_a,
            "evidence_b": self.evidence_b,
            "claim_id": self.claim_id,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    verified_claims: tuple[str, ...]
    disputed_claims: tuple[str, ...]
    unverified_claims: tuple[str, ...]
    rationale: str

    def as_dict(self) -> dict:
        return {
            "status": self.status.value,
            "verified_claims": list(self.verified_claims),
            "disputed_claims": list(self.disputed_claims),
            "unverified_claims": list(self.unverified_claims),
            "rationale": self.rationale,
        }


def confidence_score(
    reliability: float,
    supporting: int,
    contradicting: int,
    params: ScoringParams | None = None,
) -> float:
    """The confidence formula on explicit counts, clamped into [0, 1]."""
    if supporting < 0 or contradicting < 0:
        raise ValueError("source counts must be non-negative")
    p = params if params is not None else ScoringParams()
    corroboration = (supporting + 1) / (supporting + contradicting + 2)
    raw = p.w_reliability * reliability + p.w_corroboration * corroboration
    return min(1.0, max(0.0, raw))


def _context_values(ev: Evidence) -> dict[str, object]:
    values: dict[str, object] = {}
    ctx = ev.context
    if ctx is None:
        return values
    when = getattr(ctx, "when", None)
    if when is not None:
        values["date"] = when.date
        if when.time is not None:
            values["time"] = when.time
    where = getattr(ctx, "where", None)
    if where is not None:
        if where.place_name:
            values["place"] = where.place_name.casefold()
        if where.geo is not None:
            values["geo"] = (where.geo.lat, where.geo.lon)
    who = getattr(ctx, "who", None)
    if who:
        values["who"] = who.casefold()
    return values


def _fact_keys(ev: Evidence) -> set[tuple]:
    """Keys identifying the facts this item asserts, scoped per claim."""
    keys: set[tuple] = set()
    values = _context_values(ev)
    for cid in ev.claim_ids:
        keys.add(("claim", cid, ev.stance.value))
        if "date" in values:
            keys.add(("when.date", cid, values["date"].isoformat()))  # type: ignore[union-attr]
        if "time" in values:
            keys.add(("when.time", cid, values["time"].isoformat()))  # type: ignore[union-attr]
        if "place" in values:
            keys.add(("where.place", cid, values["place"]))
        if "geo" in values:
            lat, lon = values["geo"]  # type: ignore[misc]
            keys.add(("where.geo", cid, round(lat, GEO_KEY_DECIMALS), round(lon, GEO_KEY_DECIMALS)))
        if "who" in values:
            keys.add(("who", cid, values["who"]))
    return keys


_OPPOSITE = {Stance.SUPPORTS: Stance.CONTRADICTS, Stance.CONTRADICTS: Stance.SUPPORTS}


def _contradicts(a: Evidence, b: Evidence, cid: str) -> bool:
    """Do a and b assert incompatible facts about claim cid?"""
    if a.stance in _OPPOSITE and b.stance is _OPPOSITE[a.stance]:
        return True
    va, vb = _context_values(a), _context_values(b)
    if "date" in va and "date" in vb and va["date"] != vb["date"]:
        return True
    if "geo" in va and "geo" in vb:
        (lat_a, lon_a), (lat_b, lon_b) = va["geo"], vb["geo"]  # type: ignore[misc]
        if cues.haversine_km(lat_a, lon_a, lat_b, lon_b) > CONFLICT_DISTANCE_KM:
            return True
    return False


def score_confidence(
    ev: Evidence, corpus: Sequence[Evidence], params: ScoringParams | None = None
) -> tuple[float, int, int]:
    """Score one item against a corpus.

    Returns (confidence, supporting_domains, contradicting_domains).
    Support and contradiction are counted in distinct registered domains
    other than the item's own.
    """
    own_keys = _fact_keys(ev)
    own_domain = ev.domain
    supporting: set[str] = set()
    contradicting: set[str] = set()
    claim_set = set(ev.claim_ids)
    for other in corpus:
        if other.evidence_id == ev.evidence_id or other.domain == own_domain:
            continue
        shared_claims = claim_set.intersection(other.claim_ids)
        if not shared_claims:
            continue
        # a domain that disputes any shared fact never counts as corroboration
        if any(_contradicts(ev, other, cid) for cid in shared_claims):
            contradicting.add(other.domain)
        elif own_keys.intersection(_fact_keys(other)):
            supporting.add(other.domain)
    s, c = len(supporting), len(contradicting - supporting)
    return confidence_score(ev.assessment.reliability, s, c, params), s, c


def detect_conflicts(corpus: Sequence[Evidence]) -> list[ConflictPair]:
    """Find all pairwise disagreements, one entry per claim and reason.

    A pair conflicts on a claim both items reference when their context
    dates are unequal, their coordinates are more than 50 km apart, or
    one supports while the other contradicts.
    """
    by_claim: dict[str, list[Evidence]] = {}
    for ev in sorted(corpus, key=lambda e: e.evidence_id):
        for cid in ev.claim_ids:
            by_claim.setdefault(cid, []).append(ev)
    pairs: set[ConflictPair] = set()
    for cid, group in by_claim.items():
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                first, second = sorted((a.evidence_id, b.evidence_id))
                va, vb = _context_values(a), _context_values(b)
                if "date" in va and "date" in vb and va["date"] != vb["date"]:
                    pairs.add(ConflictPair(first, second, cid, "date"))
                if "geo" in va and "geo" in vb:
                    (lat_a, lon_a), (lat_b, lon_b) = va["geo"], vb["geo"]  # type: ignore[misc]
                    if cues.haversine_km(lat_a, lon_a, lat_b, lon_b) > CONFLICT_DISTANCE_KM:
                        pairs.add(ConflictPair(first, second, cid, "location"))
                if {a.stance, b.stance} == {Stance.SUPPORTS, Stance.CONTRADICTS}:
                    pairs.add(ConflictPair(first, second, cid, "stance"))
    return sorted(pairs, key=lambda p: (p.evidence_a, p.evidence_b, p.claim_id, p.reason))


def categorize(
    ev: Evidence, conflicts: Sequence[ConflictPair], params: ScoringParams | None = None
) -> EvidenceCategory:
    """Category for one finalized item.

    Conflict membership wins; otherwise a supporting item of sufficient
    confidence with at least one independent corroboration is a verified
    fact; everything else is related information.
    """
    p = params if params is not None else ScoringParams()
    for pair in conflicts:
        if ev.evidence_id in (pair.evidence_a, pair.evidence_b):
            return EvidenceCategory.DISPUTED_CLAIM
    if (
        ev.stance is Stance.SUPPORTS
        and ev.confidence >= p.verification_threshold
        and ev.assessment.independent_corroborations >= 1
    ):
        return EvidenceCategory.VERIFIED_FACT
    return EvidenceCategory.RELATED_INFORMATION


def identify_gaps(claims: Sequence["Claim"], corpus: Sequence[Evidence]) -> list[str]:
    """Claims with no VerifiedFact evidence at all, in plan order."""
    covered: set[str] = set()
    for ev in corpus:
        if ev.category is EvidenceCategory.VERIFIED_FACT:
            covered.update(ev.claim_ids)
    return [claim.claim_id for claim in claims if claim.claim_id not in covered]


def _best_confidence(corpus: Sequence[Evidence], cid: str, stance: Stance) -> float:
    best = 0.0
    for ev in corpus:
        if cid in ev.claim_ids and ev.stance is stance:
            best = max(best, ev.confidence)
    return best


def derive_verdict(
    claims: Sequence["Claim"],
    corpus: Sequence[Evidence],
    params: ScoringParams | None = None,
) -> Verdict:
    """Roll per-claim outcomes up into a case status.

    A claim is verified when a VerifiedFact item supports it; disputed
    when the best contradicting confidence beats the best supporting
    confidence by at least the refute margin; unverified otherwise.

    Case status: Refuted if any temporal or geographic claim is
    disputed; Verified if temporal and geographic claims exist, all of
    them are verified, and nothing is disputed; PartiallyVerified if at
    least one claim is verified; Inconclusive otherwise.
    """
    from .planner import ClaimCategory

    p = params if params is not None else ScoringParams()
    verified: list[str] = []
    disputed: list[str] = []
    unverified: list[str] = []
    for claim in claims:
        cid = claim.claim_id
        has_verified_support = any(
            cid in ev.claim_ids
            and ev.stance is Stance.SUPPORTS
            and ev.category is EvidenceCategory.VERIFIED_FACT
            for ev in corpus
        )
        if has_verified_support:
            verified.append(cid)
            continue
        against = _best_confidence(corpus, cid, Stance.CONTRADICTS)
        for_ = _best_confidence(corpus, cid, Stance.SUPPORTS)
        if against - for_ >= p.refute_margin:
            disputed.append(cid)
        else:
            unverified.append(cid)

    anchor = [
        c for c in claims if c.category in (ClaimCategory.TEMPORAL, ClaimCategory.GEOGRAPHIC)
    ]
    anchor_ids = {c.claim_id for c in anchor}
    if anchor_ids & set(disputed):
        status = VerdictStatus.REFUTED
    elif anchor and anchor_ids <= set(verified) and not disputed:
        status = VerdictStatus.VERIFIED
    elif verified:
        status = VerdictStatus.PARTIALLY_VERIFIED
    else:
        status = VerdictStatus.INCONCLUSIVE

    total = len(claims)
    rationale = (
        f"{len(verified)} of {total} claims verified, {len(disputed)} disputed, "
        f"{len(unverified)} unverified; temporal and geographic anchors "
        + (
            "confirmed by independent sources."
            if status is VerdictStatus.VERIFIED
            else "not fully established."
            if status is not VerdictStatus.REFUTED
            else "contradicted by higher-confidence sources."
        )
    )
    return Verdict(status, tuple(verified), tuple(disputed), tuple(unverified), rationale)


@dataclass
class FinalizedStore:
    """The finalized corpus with its derived artifacts."""

    items: tuple[Evidence, ...]
    conflicts: tuple[ConflictPair, ...]
    gaps: tuple[str, ...]
    verdict: Verdict

    def by_id(self, evidence_id: str) -> Evidence:
        for ev in self.items:
            if ev.evidence_id == evidence_id:
                return ev
        raise KeyError(evidence_id)

    def as_dict(self) -> dict:
        return {
            "evidence_schema": EVIDENCE_SCHEMA_VERSION,
            "evidence": [ev.as_dict() for ev in self.items],
            "conflicts": [pair.as_dict() for pair in self.conflicts],
            "gaps": list(self.gaps),
        }


class EvidenceStore:
    """Thread-safe accumulator for section research output."""

    def __init__(self, params: ScoringParams | None = None) -> None:
        self.params = params if params is not None else ScoringParams()
        self._lock = threading.Lock()
        self._items: list[Evidence] = []

    def add_all(self, items: Iterable[Evidence]) -> None:
        batch = list(items)
        with self._lock:
            for ev in batch:
                for existing in self._items:
                    if existing.evidence_id == ev.evidence_id:
                        raise ValueError(f"duplicate evidence id {ev.evidence_id}")
                self._items.append(ev)

    def finalize(self, claims: Sequence["Claim"]) -> FinalizedStore:
        """Re-score everything against the full corpus and derive outputs.

        Sorting by evidence id first makes the result independent of
        insertion order.
        """
        with self._lock:
            items = sorted(self._items, key=lambda e: e.evidence_id)
        rescored: list[Evidence] = []
        for ev in items:
            confidence, s, _ = score_confidence(ev, items, self.params)
            rescored.append(
                replace(
                    ev,
                    confidence=confidence,
                    assessment=replace(ev.assessment, independent_corroborations=s),
                )
            )
        conflicts = detect_conflicts(rescored)
        categorized = [
            replace(ev, category=categorize(ev, conflicts, self.params)) for ev in rescored
        ]
        gaps = identify_gaps(claims, categorized)
        verdict = derive_verdict(claims, categorized, self.params)
        return FinalizedStore(tuple(categorized), tuple(conflicts), tuple(gaps), verdict)
