"""Stage 4: deep research over one section at a time.

The engine runs a bounded iterative loop.  Each iteration generates
search queries for the section's claims (seeded from claim text, then
refined with values found in earlier evidence), runs the section's tools
in a fixed order, and stops early once every claim is backed by enough
independent sources.  Exhausting the budget is not an error: the loop
stops and whatever was gathered is flagged as a coverage gap.

Tools are looked up in a registry keyed by tool kind, so tests can
substitute any of them.  Query-driven tools (KeywordSearch,
VerifiedNews5W) run every iteration; asset- and claim-keyed tools
(MetadataAnalysis, ForensicCheck, ReverseImageSearch, FactCheckLookup)
run in the first iteration only, since their inputs never change.

Every tool call appends exactly one provenance record.  Records chain
parent-to-child in execution order, carrying input and output digests,
so any evidence item can be traced back to the calls that produced it.

Source independence is counted in registered web domains; case media
participates under an ``asset:<id>`` pseudo-URL so each file counts as
its own source.
"""

from __future__ import annotations

import datetime as dt
import enum
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import cv2
import numpy as np

from . import cues
from .case_ingest import MediaAsset, MediaKind
from .errors import VeriflowError
from .evidence import Evidence, EvidenceCategory, ScoringParams, Stance, confidence_score
from .gateway import (
    CacheCorrupt,
    FactVerdict,
    MalformedProviderResponse,
    ProviderGateway,
    ProviderUnavailable,
    ReplayMiss,
    SearchResult,
    canonical_json,
    sha256_hex,
)
from .media import ImageAnalysis, VideoAnalysis
from .planner import ROUTING, Claim, ClaimCategory, ToolKind
from .sectioner import Section

DEFAULT_RELIABILITY = 0.5
SEARCH_RESULTS_PER_QUERY = 5
DEEP_ANALYSES_PER_QUERY = 3
RIS_RESULTS_PER_ASSET = 3
FACT_CHECK_ENTRIES_PER_CLAIM = 3
_QUERY_TOKEN_LIMIT = 8
_REFINEMENT_TOKEN_LIMIT = 4

_GATEWAY_ERRORS = (ReplayMiss, ProviderUnavailable, CacheCorrupt, MalformedProviderResponse)

_FORENSIC_SAMPLE_FRAMES = 32
_FORENSIC_DOWNSCALE_PX = 64
_DUPLICATE_RATIO_LIMIT = 0.5
_BLOCKINESS_RATIO_LIMIT = 1.35

METHOD_OVERLAY = "overlay-consistency-check"
METHOD_DUPLICATES = "duplicate-frame-scan"
METHOD_RECOMPRESSION = "recompression-artifact-scan"
METHOD_SATELLITE = "satellite-imagery-comparison (not implemented)"


class ToolMissing(VeriflowError):
    """A routed tool kind has no registered implementation."""


class UnextractableSource(VeriflowError):
    """A source yielded no usable context fields at all."""


class ProvenanceInvalid(VeriflowError):
    """A provenance record set failed validation."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: {self.lat}, {self.lon}")

    def formatted(self) -> str:
        return cues.format_coords(self.lat, self.lon)


@dataclass(frozen=True)
class WhereContext:
    place_name: str
    geo: GeoPoint | None = None

    def as_dict(self) -> dict:
        return {
            "place_name": self.place_name,
            "geo": {"lat": self.geo.lat, "lon": self.geo.lon} if self.geo else None,
        }


@dataclass(frozen=True)
class WhenContext:
    date: dt.date
    time: dt.time | None = None
    cues: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "time": self.time.isoformat() if self.time else None,
            "cues": list(self.cues),
        }


@dataclass(frozen=True)
class SourceContext:
    """The five source-detail fields extracted for one source.

    At least one field is populated; construction of an all-empty
    context raises UnextractableSource.
    """

    source_detail: str | None = None
    where: WhereContext | None = None
    when: WhenContext | None = None
    who: str | None = None
    why: str | None = None

    def __post_init__(self) -> None:
        if not (self.source_detail or self.where or self.when or self.who or self.why):
            raise UnextractableSource("no context fields could be populated")

    def as_dict(self) -> dict:
        return {
            "source_detail": self.source_detail,
            "where": self.where.as_dict() if self.where else None,
            "when": self.when.as_dict() if self.when else None,
            "who": self.who,
            "why": self.why,
        }


@dataclass(frozen=True)
class SourceAssessment:
    reliability: float
    independent_corroborations: int = 0
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError("reliability must be within [0, 1]")
        if self.independent_corroborations < 0:
            raise ValueError("corroboration count must be non-negative")

    def as_dict(self) -> dict:
        return {
            "reliability": self.reliability,
            "independent_corroborations": self.independent_corroborations,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class SearchQuery:
    text: str
    section_id: str
    iteration: int
    origin: str = "seed"

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class ProvenanceRecord:
    step_id: str
    tool: str
    input_digest: str
    output_digest: str
    timestamp: dt.datetime
    parents: tuple[str, ...] = ()
    note: str | None = None

    def __post_init__(self) -> None:
        for digest in (self.input_digest, self.output_digest):
            if not re.fullmatch(r"[0-9a-f]{64}", digest):
                raise ValueError(f"not a content digest: {digest!r}")

    def as_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "tool": self.tool,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
            "timestamp": self.timestamp.isoformat(),
            "parents": list(self.parents),
            "note": self.note,
        }


@dataclass(frozen=True)
class ResearchBudget:
    max_iterations: int = 3
    max_tool_calls: int = 24
    min_independent_sources: int = 2

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.max_tool_calls < 1:
            raise ValueError("budget limits must be at least 1")
        if self.min_independent_sources < 1:
            raise ValueError("min_independent_sources must be at least 1")


class TrustTableError(VeriflowError):
    """A trust table file could not be parsed."""


@dataclass(frozen=True)
class TrustTable:
    """Reliability scores per registered domain, 0.5 when unlisted."""

    scores: Mapping[str, float] = field(default_factory=dict)

    def lookup(self, domain: str) -> float:
        return self.scores.get(domain.lower(), DEFAULT_RELIABILITY)

    def __contains__(self, domain: str) -> bool:
        return domain.lower() in self.scores


def load_trust_table(path: str | Path) -> TrustTable:
    """Parse a ``domain<TAB>score`` file; '#' lines and blanks ignored."""
    scores: dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 2:
            raise TrustTableError(f"line {lineno}: expected 'domain<TAB>score'")
        domain, raw_score = parts[0].strip().lower(), parts[1].strip()
        try:
            score = float(raw_score)
        except ValueError:
            raise TrustTableError(f"line {lineno}: score {raw_score!r} is not a number") from None
        if not 0.0 <= score <= 1.0:
            raise TrustTableError(f"line {lineno}: score {score} outside [0, 1]")
        scores[domain] = score
    return TrustTable(scores)


# -- claim cues and stance inference -----------------------------------


@dataclass(frozen=True)
class ClaimCues:
    dates: tuple[dt.date, ...]
    times: tuple[dt.time, ...]
    places: tuple[str, ...]
    geo: tuple[float, float] | None
    entities: tuple[str, ...]
    tokens: tuple[str, ...]


def build_claim_cues(text: str) -> ClaimCues:
    coords = cues.find_coords(text)
    entities: list[str] = []
    for handle in cues.find_handles(text):
        entities.append(handle)
    for byline in cues.find_bylines(text):
        entities.append(byline)
    for domain in cues.find_domains(text):
        entities.append(domain)
    for phrase in cues.title_case_phrases(text):
        entities.append(phrase)
    return ClaimCues(
        dates=tuple(cues.find_dates(text)),
        times=tuple(cues.find_times(text)),
        places=tuple(cues.find_places(text)),
        geo=coords[0] if coords else None,
        entities=tuple(entities),
        tokens=tuple(t.casefold() for t in cues.salient_tokens(text, limit=20)),
    )


def _place_overlap(claim_places: Sequence[str], context_text: str) -> bool:
    haystack = context_text.casefold()
    for place in claim_places:
        if place.casefold() in haystack:
            return True
        words = [w for w in place.casefold().split() if len(w) >= 4]
        if words and any(w in haystack for w in words):
            return True
    return False


def infer_stance(
    claim_cues: ClaimCues,
    category: ClaimCategory,
    context: SourceContext | None,
    text: str,
) -> Stance:
    """Compare a source against one claim's cues.

    Contradiction requires an explicit mismatched value (a different
    date, or coordinates further apart than the conflict distance);
    anything without a positive or negative signal is Related.
    """
    ctx_date = context.when.date if context and context.when else None
    ctx_time = context.when.time if context and context.when else None
    ctx_geo = context.where.geo if context and context.where else None
    ctx_place = context.where.place_name if context and context.where else ""
    ctx_who = context.who if context else None
    text_dates = cues.find_dates(text)
    text_times = cues.find_times(text)

    if category is ClaimCategory.TEMPORAL:
        if claim_cues.dates:
            target = claim_cues.dates[0]
            if ctx_date == target or target in text_dates:
                return Stance.SUPPORTS
            if ctx_date is not None and ctx_date != target:
                return Stance.CONTRADICTS
        if claim_cues.times:
            target_time = claim_cues.times[0]
            if ctx_time == target_time or target_time in text_times:
                return Stance.SUPPORTS
        return Stance.RELATED

    if category is ClaimCategory.GEOGRAPHIC:
        if claim_cues.geo and ctx_geo is not None:
            lat, lon = claim_cues.geo
            distance = cues.haversine_km(lat, lon, ctx_geo.lat, ctx_geo.lon)
            if distance <= 50.0:
                return Stance.SUPPORTS
            return Stance.CONTRADICTS
        if claim_cues.places and _place_overlap(claim_cues.places, f"{ctx_place}\n{text}"):
            return Stance.SUPPORTS
        return Stance.RELATED

    if category is ClaimCategory.ENTITY:
        haystack = f"{ctx_who or ''}\n{text}".casefold()
        for entity in claim_cues.entities:
            if entity.casefold() in haystack:
                return Stance.SUPPORTS
        return Stance.RELATED

    tokens = set(claim_cues.tokens)
    if not tokens:
        return Stance.RELATED
    text_tokens = {t.casefold() for t in cues.salient_tokens(text, limit=50)}
    overlap = len(tokens & text_tokens) / len(tokens)
    return Stance.SUPPORTS if overlap >= 0.6 else Stance.RELATED


# -- source context extraction -----------------------------------------


def extract_source_context(
    result: SearchResult, body: str, provider_fields: Mapping[str, str] | None = None
) -> SourceContext:
    """Build the five-field context for one source.

    Provider-supplied field strings win when parseable; deterministic
    local extraction fills the gaps.  Every populated value is derived
    from the body, the result metadata, or the provider fields; nothing
    is invented.  Raises UnextractableSource when every field comes up
    empty.
    """
    fields = dict(provider_fields or {})
    corpus = "\n".join(part for part in (result.title, result.snippet, body) if part)

    source_detail = fields.get("source_detail") or cues.first_informative_sentence(body or "")

    where = None
    where_text = fields.get("where", "")
    coords = cues.find_coords(where_text) or cues.find_coords(corpus)
    places = cues.find_places(where_text) or cues.find_places(corpus)
    if places or coords:
        geo = GeoPoint(*coords[0]) if coords else None
        place_name = places[0] if places else geo.formatted()  # type: ignore[union-attr]
        where = WhereContext(place_name=place_name, geo=geo)

    when = None
    when_text = fields.get("when", "")
    dates = cues.find_dates(when_text) or cues.find_dates(corpus)
    times = cues.find_times(when_text) or cues.find_times(corpus)
    if dates:
        markers = [cues.format_date_dmy(dates[0])]
        if times:
            markers.append(cues.format_time(times[0]))
        when = WhenContext(date=dates[0], time=times[0] if times else None, cues=tuple(markers))

    who = fields.get("who")
    if not who:
        bylines = cues.find_bylines(corpus)
        handles = cues.find_handles(corpus)
        if bylines:
            who = bylines[0]
        elif handles:
            who = f"@{handles[0]}"

    why = fields.get("why") or cues.find_why(corpus)

    return SourceContext(source_detail=source_detail, where=where, when=when, who=who, why=why)


def gather_source_context(result: SearchResult, gateway: ProviderGateway) -> SourceContext:
    """Fetch, ask the provider, and extract; falls back to the snippet
    when the page body is unavailable and to local extraction when the
    provider has nothing recorded."""
    try:
        body = gateway.fetch_page(result.url)
    except _GATEWAY_ERRORS:
        body = result.snippet
    try:
        provider_fields = gateway.extract_source_details(result.url, body)
    except _GATEWAY_ERRORS:
        provider_fields = {}
    return extract_source_context(result, body, provider_fields)


def analyze_source(
    result: SearchResult, context: SourceContext | None, trust: TrustTable
) -> SourceAssessment:
    """Initial source assessment: trust-table reliability plus notes.

    Corroboration counts start at zero; the evidence store recomputes
    them against the full corpus.
    """
    domain = cues.registered_domain(result.url)
    notes: list[str] = []
    if domain in trust:
        notes.append(f"reliability from trust table entry for {domain}")
    else:
        notes.append(f"domain {domain} not in trust table; default reliability applied")
    if context is None:
        notes.append("no source context extracted")
    return SourceAssessment(
        reliability=trust.lookup(domain), independent_corroborations=0, notes=tuple(notes)
    )


# -- query generation ---------------------------------------------------


def generate_queries(
    section: Section,
    claims: Sequence[Claim],
    prior_contexts: Sequence[SourceContext],
    iteration: int,
    issued: set[str] | None = None,
) -> list[SearchQuery]:
    """One query per claim: salient claim tokens, refined on later
    iterations with values surfaced by earlier evidence.  Queries whose
    text was already issued are dropped, so the loop never repeats a
    search verbatim."""
    issued_texts = {t.casefold() for t in (issued or set())}
    refinements: list[str] = []
    if iteration > 0:
        seen: set[str] = set()
        for ctx in prior_contexts:
            candidates: list[str] = []
            if ctx.where and ctx.where.place_name:
                candidates.extend(ctx.where.place_name.split())
            if ctx.who:
                candidates.extend(ctx.who.split()[:3])
            if ctx.when:
                candidates.append(ctx.when.date.isoformat())
            for token in candidates:
                cleaned = token.strip(".,;:!?")
                key = cleaned.casefold()
                if len(cleaned) >= 3 and key not in cues.STOPWORDS and key not in seen:
                    seen.add(key)
                    refinements.append(cleaned)
    out: list[SearchQuery] = []
    batch_seen: set[str] = set()
    for claim in claims:
        tokens = cues.salient_tokens(claim.text, limit=_QUERY_TOKEN_LIMIT)
        token_keys = {t.casefold() for t in tokens}
        extras = [r for r in refinements if r.casefold() not in token_keys]
        extras = extras[:_REFINEMENT_TOKEN_LIMIT]
        words = tokens + extras if iteration > 0 else tokens
        text = " ".join(words)
        key = text.casefold()
        if not text or key in issued_texts or key in batch_seen:
            continue
        batch_seen.add(key)
        out.append(
            SearchQuery(
                text=text,
                section_id=section.section_id,
                iteration=iteration,
                origin="refined" if iteration > 0 else "seed",
            )
        )
    return out


# -- metadata and forensic tools ----------------------------------------


@dataclass(frozen=True)
class MetadataCandidate:
    """One technical-metadata reading, cross-checked against overlays.

    ``consistent`` is True/False when overlay text offered a comparable
    value, None when there was nothing to compare against.
    """

    asset_id: str
    field: str
    value: str
    when: dt.datetime | None = None
    geo: tuple[float, float] | None = None
    consistent: bool | None = None

    def as_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "field": self.field,
            "value": self.value,
            "consistent": self.consistent,
        }


def run_metadata_tool(
    asset: MediaAsset,
    analysis: VideoAnalysis | ImageAnalysis | None,
    overlay_texts: Sequence[str] = (),
) -> list[MetadataCandidate]:
    """Read container/EXIF metadata into candidates.

    Each dated candidate is cross-checked against dates appearing in the
    asset's overlay texts.  An asset without usable metadata (a stripped
    image, an encoder that zeroed its timestamps) yields zero candidates.
    """
    overlay_dates: set[dt.date] = set()
    for text in overlay_texts:
        overlay_dates.update(cues.find_dates(text))

    def date_consistency(moment: dt.datetime) -> bool | None:
        if not overlay_dates:
            return None
        return moment.date() in overlay_dates

    candidates: list[MetadataCandidate] = []
    if isinstance(analysis, VideoAnalysis):
        created = analysis.container_created_utc
        if created is not None:
            candidates.append(
                MetadataCandidate(
                    asset_id=asset.asset_id,
                    field="container-created",
                    value=created.isoformat(),
                    when=created,
                    consistent=date_consistency(created),
                )
            )
    elif isinstance(analysis, ImageAnalysis):
        if analysis.exif_datetime is not None:
            candidates.append(
                MetadataCandidate(
                    asset_id=asset.asset_id,
                    field="exif-datetime",
                    value=analysis.exif_datetime.isoformat(),
                    when=analysis.exif_datetime,
                    consistent=date_consistency(analysis.exif_datetime),
                )
            )
        if analysis.gps is not None:
            lat, lon = analysis.gps
            candidates.append(
                MetadataCandidate(
                    asset_id=asset.asset_id,
                    field="exif-gps",
                    value=cues.format_coords(lat, lon),
                    geo=(lat, lon),
                )
            )
        if analysis.camera:
            candidates.append(
                MetadataCandidate(
                    asset_id=asset.asset_id, field="camera-model", value=analysis.camera
                )
            )
    return candidates


class Authenticity(enum.Enum):
    NO_MANIPULATION = "NoManipulationDetected"
    SUSPECTED_MANIPULATION = "SuspectedManipulation"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ForensicFindings:
    authenticity: Authenticity
    synthetic_type: str | None
    artifacts: tuple[str, ...]
    methods: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "authenticity": self.authenticity.value,
            "synthetic_type": self.synthetic_type,
            "artifacts": list(self.artifacts),
            "methods": list(self.methods),
        }


def _sample_grays(path: Path) -> tuple[list[np.ndarray], np.ndarray | None]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        return [], None
    downs: list[np.ndarray] = []
    middle_full: np.ndarray | None = None
    frames: list[np.ndarray] = []
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(frame)
    finally:
        cap.release()
    if not frames:
        return [], None
    if len(frames) > _FORENSIC_SAMPLE_FRAMES:
        picks = sorted({int(i) for i in np.linspace(0, len(frames) - 1, _FORENSIC_SAMPLE_FRAMES)})
    else:
        picks = list(range(len(frames)))
    for i in picks:
        gray = cv2.cvtColor(frames[i], cv2.COLOR_BGR2GRAY)
        downs.append(
            cv2.resize(
                gray, (_FORENSIC_DOWNSCALE_PX, _FORENSIC_DOWNSCALE_PX), interpolation=cv2.INTER_AREA
            )
        )
    middle_full = cv2.cvtColor(frames[len(frames) // 2], cv2.COLOR_BGR2GRAY)
    return downs, middle_full


def _blockiness_ratio(gray: np.ndarray) -> float | None:
    if gray is None or gray.shape[1] < 17:
        return None
    g = gray.astype(np.float64)
    col_diffs = np.abs(np.diff(g, axis=1))
    boundary_cols = [x for x in range(col_diffs.shape[1]) if (x + 1) % 8 == 0]
    other_cols = [x for x in range(col_diffs.shape[1]) if (x + 1) % 8 != 0]
    if not boundary_cols or not other_cols:
        return None
    at_boundary = float(np.mean(col_diffs[:, boundary_cols]))
    elsewhere = float(np.mean(col_diffs[:, other_cols]))
    if elsewhere <= 1e-9:
        return None
    return at_boundary / elsewhere


def _duplicate_ratio(downs: list[np.ndarray]) -> float:
    total = 0
    duplicated = 0
    for i in range(len(downs)):
        for j in range(i + 2, len(downs)):  # skip adjacent pairs
            total += 1
            if np.array_equal(downs[i], downs[j]):
                duplicated += 1
    return duplicated / total if total else 0.0


def run_forensic_tool(
    asset: MediaAsset, analysis: VideoAnalysis | ImageAnalysis | None = None
) -> ForensicFindings:
    """Run the authenticity checks on one asset.

    Checks: overlay date consistency (all on-screen dates must agree),
    a duplicate-frame scan for looped or spliced spans, and a
    recompression scan whose findings are recorded as artifacts without
    affecting the authenticity outcome.  The verdict is
    NoManipulationDetected only when every check ran and passed.
    """
    methods = (METHOD_OVERLAY, METHOD_DUPLICATES, METHOD_RECOMPRESSION, METHOD_SATELLITE)
    artifacts: list[str] = []
    failures: list[str] = []

    overlay_texts: list[str] = []
    if isinstance(analysis, VideoAnalysis):
        overlay_texts = [ov.text for ov in analysis.all_overlays()]
    overlay_dates: set[dt.date] = set()
    for text in overlay_texts:
        overlay_dates.update(cues.find_dates(text))
    if len(overlay_dates) > 1:
        failures.append("overlay")
        artifacts.append("inconsistent overlay dates")

    middle_gray: np.ndarray | None = None
    if asset.kind is MediaKind.VIDEO:
        downs, middle_gray = _sample_grays(asset.path)
        if not downs:
            return ForensicFindings(
                Authenticity.INCONCLUSIVE, None, ("media could not be decoded",), methods
            )
        if len(downs) >= 3 and _duplicate_ratio(downs) > _DUPLICATE_RATIO_LIMIT:
            failures.append("duplicates")
            artifacts.append("extended duplicated frame spans")
    else:
        image = cv2.imread(str(asset.path), cv2.IMREAD_GRAYSCALE)
        if image is None:
            return ForensicFindings(
                Authenticity.INCONCLUSIVE, None, ("media could not be decoded",), methods
            )
        middle_gray = image

    ratio = _blockiness_ratio(middle_gray) if middle_gray is not None else None
    if ratio is not None and ratio > _BLOCKINESS_RATIO_LIMIT:
        artifacts.append("minor compression artifacts")

    if failures:
        synthetic = (
            "possible looped or duplicated frames"
            if "duplicates" in failures
            else "overlay timeline mismatch"
        )
        return ForensicFindings(
            Authenticity.SUSPECTED_MANIPULATION, synthetic, tuple(artifacts), methods
        )
    return ForensicFindings(Authenticity.NO_MANIPULATION, None, tuple(artifacts), methods)


_AUTHENTICITY_RANK = {
    Authenticity.SUSPECTED_MANIPULATION: 0,
    Authenticity.INCONCLUSIVE: 1,
    Authenticity.NO_MANIPULATION: 2,
}


def aggregate_forensics(items: Sequence[ForensicFindings]) -> ForensicFindings:
    """Combine per-asset findings into one case-level reading (worst wins)."""
    if not items:
        return ForensicFindings(Authenticity.INCONCLUSIVE, None, ("no media analyzed",), ())
    authenticity = min((f.authenticity for f in items), key=_AUTHENTICITY_RANK.__getitem__)
    synthetic = next((f.synthetic_type for f in items if f.synthetic_type), None)
    artifacts: dict[str, None] = {}
    methods: dict[str, None] = {}
    for finding in items:
        for artifact in finding.artifacts:
            artifacts.setdefault(artifact, None)
        for method in finding.methods:
            methods.setdefault(method, None)
    return ForensicFindings(authenticity, synthetic, tuple(artifacts), tuple(methods))


# -- the research engine ------------------------------------------------


ToolFn = Callable[["SectionRun"], None]


class ToolRegistry:
    """Pluggable tool implementations keyed by tool kind."""

    def __init__(self) -> None:
        self._tools: dict[ToolKind, ToolFn] = {}

    def register(self, kind: ToolKind, fn: ToolFn) -> None:
        self._tools[kind] = fn

    def get(self, kind: ToolKind) -> ToolFn:
        try:
            return self._tools[kind]
        except KeyError:
            raise ToolMissing(f"no implementation registered for {kind.value}") from None

    def kinds(self) -> set[ToolKind]:
        return set(self._tools)


@dataclass(frozen=True)
class SectionResearch:
    section_id: str
    evidence: tuple[Evidence, ...]
    records: tuple[ProvenanceRecord, ...]
    iterations_run: int
    tool_calls: int
    coverage_gap: bool
    uncovered_claims: tuple[str, ...]


class SectionRun:
    """Mutable state for one research_section invocation.

    Tools read queries and results from here and push evidence and
    provenance records back.  All counters and collections are touched
    from a single thread; cross-section concurrency happens one
    SectionRun per worker.
    """

    def __init__(
        self,
        section: Section,
        claims: Sequence[Claim],
        gateway: ProviderGateway,
        budget: ResearchBudget,
        trust: TrustTable,
        scoring: ScoringParams,
        clock,
        parents: Sequence[str],
    ) -> None:
        self.section = section
        self.claims = list(claims)
        self.gateway = gateway
        self.budget = budget
        self.trust = trust
        self.scoring = scoring
        self.clock = clock
        self.slug = section.category.value.lower()
        self.evidence: list[Evidence] = []
        self.records: list[ProvenanceRecord] = []
        self.issued_queries: set[str] = set()
        self.current_queries: list[SearchQuery] = []
        self.pool: dict[str, list[SearchResult]] = {}
        self.analyzed_urls: set[str] = set()
        self.iteration = 0
        self.tool_calls = 0
        self.exhausted = False
        self.iteration_units = 0
        self.iteration_failures = 0
        self.claim_cues: dict[str, ClaimCues] = {
            c.claim_id: build_claim_cues(c.text) for c in claims
        }
        self._last_step: str | None = None
        self._parents = tuple(parents)

    # -- bookkeeping ----------------------------------------------------

    def charge(self) -> bool:
        """Reserve one tool call; False (and exhausted) once over budget."""
        if self.tool_calls >= self.budget.max_tool_calls:
            self.exhausted = True
            return False
        self.tool_calls += 1
        self.iteration_units += 1
        return True

    def record_step(
        self, tool: str, input_obj: object, output_obj: object, note: str | None = None
    ) -> str:
        input_digest = (
            sha256_hex(input_obj)
            if isinstance(input_obj, bytes)
            else sha256_hex(canonical_json(input_obj).encode("utf-8"))
        )
        output_digest = (
            sha256_hex(output_obj)
            if isinstance(output_obj, bytes)
            else sha256_hex(canonical_json(output_obj).encode("utf-8"))
        )
        step_id = f"st-{self.slug}-{len(self.records) + 1:03d}"
        parents = (self._last_step,) if self._last_step else self._parents
        record = ProvenanceRecord(
            step_id=step_id,
            tool=tool,
            input_digest=input_digest,
            output_digest=output_digest,
            timestamp=self.clock.now(),
            parents=parents,
            note=note,
        )
        self.records.append(record)
        self._last_step = step_id
        return step_id

    def record_failure(self, tool: str, input_obj: object, error: Exception) -> None:
        self.iteration_failures += 1
        self.record_step(tool, input_obj, {"error": str(error)}, note="call failed")

    def add_evidence(
        self,
        *,
        stance: Stance,
        claim_ids: Sequence[str],
        content: str,
        source: SearchResult,
        context: SourceContext | None,
        step_id: str,
    ) -> Evidence:
        assessment = analyze_source(source, context, self.trust)
        ev = Evidence(
            evidence_id=f"ev-{self.slug}-{len(self.evidence) + 1:04d}",
            section_id=self.section.section_id,
            claim_ids=tuple(claim_ids),
            stance=stance,
            category=EvidenceCategory.RELATED_INFORMATION,
            content=cues.normalize_ws(content),
            source=source,
            context=context,
            assessment=assessment,
            confidence=confidence_score(assessment.reliability, 0, 0, self.scoring),
            step_id=step_id,
        )
        self.evidence.append(ev)
        return ev

    def stance_groups(
        self, context: SourceContext | None, text: str
    ) -> dict[Stance, list[str]]:
        """Claims grouped by inferred stance, Related claims dropped."""
        groups: dict[Stance, list[str]] = {}
        for claim in self.claims:
            stance = infer_stance(
                self.claim_cues[claim.claim_id], claim.category, context, text
            )
            if stance is not Stance.RELATED:
                groups.setdefault(stance, []).append(claim.claim_id)
        return groups

    def add_result_evidence(
        self,
        result: SearchResult,
        context: SourceContext | None,
        text: str,
        content_prefix: str,
        step_id: str,
    ) -> None:
        groups = self.stance_groups(context, text)
        summary = cues.normalize_ws(f"{result.title}. {result.snippet}")[:240]
        if not groups:
            self.add_evidence(
                stance=Stance.RELATED,
                claim_ids=(),
                content=f"{content_prefix}: {summary}",
                source=result,
                context=context,
                step_id=step_id,
            )
            return
        for stance in (Stance.SUPPORTS, Stance.CONTRADICTS):
            ids = groups.get(stance)
            if ids:
                self.add_evidence(
                    stance=stance,
                    claim_ids=ids,
                    content=f"{content_prefix}: {summary}",
                    source=result,
                    context=context,
                    step_id=step_id,
                )

    def asset_source(self, asset_id: str, summary: str) -> SearchResult:
        return SearchResult(
            url=f"asset:{asset_id}",
            title=asset_id,
            snippet=summary,
            publisher=None,
            published_at=None,
            retrieved_at=self.gateway.clock.now(),
        )

    def covered(self, claim_id: str) -> bool:
        domains = {
            ev.domain
            for ev in self.evidence
            if claim_id in ev.claim_ids and ev.stance is not Stance.RELATED
        }
        return len(domains) >= self.budget.min_independent_sources

    def uncovered(self) -> list[str]:
        return [c.claim_id for c in self.claims if not self.covered(c.claim_id)]


# -- default tool implementations ---------------------------------------


def _keyword_search_tool(rt: SectionRun) -> None:
    for query in rt.current_queries:
        if not rt.charge():
            return
        request_info = {"query": query.text, "iteration": query.iteration}
        try:
            results = rt.gateway.web_search(query)
        except _GATEWAY_ERRORS as exc:
            rt.record_failure(ToolKind.KEYWORD_SEARCH.value, request_info, exc)
            continue
        rt.pool[query.text] = results
        step_id = rt.record_step(
            ToolKind.KEYWORD_SEARCH.value, request_info, [r.as_dict() for r in results]
        )
        for result in results[:SEARCH_RESULTS_PER_QUERY]:
            surface = f"{result.title}\n{result.snippet}"
            try:
                context = extract_source_context(result, result.snippet)
            except UnextractableSource:
                context = None
            rt.add_result_evidence(result, context, surface, "Search result", step_id)


def _deep_source_tool(rt: SectionRun) -> None:
    for results in rt.pool.values():
        for result in results[:DEEP_ANALYSES_PER_QUERY]:
            if result.url in rt.analyzed_urls:
                continue
            if not rt.charge():
                return
            rt.analyzed_urls.add(result.url)
            try:
                body = rt.gateway.fetch_page(result.url)
            except _GATEWAY_ERRORS:
                body = result.snippet
            try:
                provider_fields = rt.gateway.extract_source_details(result.url, body)
            except _GATEWAY_ERRORS:
                provider_fields = {}
            try:
                context = extract_source_context(result, body, provider_fields)
            except UnextractableSource as exc:
                rt.record_step(
                    ToolKind.VERIFIED_NEWS_5W.value,
                    {"url": result.url},
                    {"error": str(exc)},
                    note="no context extractable",
                )
                continue
            step_id = rt.record_step(
                ToolKind.VERIFIED_NEWS_5W.value, {"url": result.url}, context.as_dict()
            )
            surface = f"{result.title}\n{result.snippet}\n{body}"
            rt.add_result_evidence(result, context, surface, "Source analysis", step_id)


def _fact_check_tool(rt: SectionRun) -> None:
    if rt.iteration > 0:
        return
    for claim in rt.claims:
        if ToolKind.FACT_CHECK_LOOKUP not in claim.tools:
            continue
        if not rt.charge():
            return
        try:
            entries = rt.gateway.fact_check_lookup(claim.text)
        except _GATEWAY_ERRORS as exc:
            rt.record_failure(ToolKind.FACT_CHECK_LOOKUP.value, {"claim": claim.claim_id}, exc)
            continue
        step_id = rt.record_step(
            ToolKind.FACT_CHECK_LOOKUP.value,
            {"claim": claim.claim_id},
            [e.as_dict() for e in entries],
        )
        stance_map = {
            FactVerdict.TRUE: Stance.SUPPORTS,
            FactVerdict.FALSE: Stance.CONTRADICTS,
            FactVerdict.MIXED: Stance.RELATED,
            FactVerdict.UNRATED: Stance.RELATED,
        }
        for entry in entries[:FACT_CHECK_ENTRIES_PER_CLAIM]:
            stance = stance_map[entry.verdict]
            source = SearchResult(
                url=entry.url,
                title=f"Fact check ({entry.verdict.value})",
                snippet=claim.text,
                publisher=entry.publisher,
                published_at=entry.published_at,
                retrieved_at=rt.gateway.clock.now(),
            )
            rt.add_evidence(
                stance=stance,
                claim_ids=(claim.claim_id,) if stance is not Stance.RELATED else (),
                content=f"Fact-check entry rated {entry.verdict.value} for: {claim.text}",
                source=source,
                context=None,
                step_id=step_id,
            )


def make_default_registry(
    assets: Sequence[MediaAsset],
    analyses: Sequence[VideoAnalysis | ImageAnalysis],
    forensics: Mapping[str, ForensicFindings] | None = None,
) -> ToolRegistry:
    """The standard six tools, bound to this case's media.

    ``forensics`` may carry precomputed per-asset findings; otherwise
    the forensic tool computes them on first use.
    """
    by_id: dict[str, VideoAnalysis | ImageAnalysis] = {a.asset_id: a for a in analyses}
    ordered_assets = sorted(assets, key=lambda a: a.asset_id)
    forensic_cache: dict[str, ForensicFindings] = dict(forensics or {})

    def metadata_tool(rt: SectionRun) -> None:
        if rt.iteration > 0:
            return
        for asset in ordered_assets:
            if not rt.charge():
                return
            analysis = by_id.get(asset.asset_id)
            overlay_texts: list[str] = []
            if isinstance(analysis, VideoAnalysis):
                overlay_texts = [ov.text for ov in analysis.all_overlays()]
            candidates = run_metadata_tool(asset, analysis, overlay_texts)
            step_id = rt.record_step(
                ToolKind.METADATA_ANALYSIS.value,
                {"asset": asset.asset_id},
                [c.as_dict() for c in candidates],
            )
            for cand in candidates:
                suffix = ""
                if cand.consistent is True:
                    suffix = " (consistent with on-screen overlay)"
                elif cand.consistent is False:
                    suffix = " (mismatches on-screen overlay)"
                content = f"{cand.field} of {cand.asset_id}: {cand.value}{suffix}"
                context: SourceContext | None = None
                if cand.when is not None:
                    context = SourceContext(
                        source_detail=f"{cand.asset_id} technical metadata",
                        when=WhenContext(
                            date=cand.when.date(),
                            time=cand.when.time(),
                            cues=(cand.value,),
                        ),
                    )
                elif cand.geo is not None:
                    context = SourceContext(
                        source_detail=f"{cand.asset_id} technical metadata",
                        where=WhereContext(
                            place_name=cues.format_coords(*cand.geo),
                            geo=GeoPoint(*cand.geo),
                        ),
                    )
                source = rt.asset_source(cand.asset_id, content)
                groups = rt.stance_groups(context, cand.value)
                if context is not None and groups:
                    for stance in (Stance.SUPPORTS, Stance.CONTRADICTS):
                        ids = groups.get(stance)
                        if ids:
                            rt.add_evidence(
                                stance=stance,
                                claim_ids=ids,
                                content=content,
                                source=source,
                                context=context,
                                step_id=step_id,
                            )
                else:
                    rt.add_evidence(
                        stance=Stance.RELATED,
                        claim_ids=(),
                        content=content,
                        source=source,
                        context=context,
                        step_id=step_id,
                    )

    def forensic_tool(rt: SectionRun) -> None:
        if rt.iteration > 0:
            return
        for asset in ordered_assets:
            if not rt.charge():
                return
            if asset.asset_id not in forensic_cache:
                forensic_cache[asset.asset_id] = run_forensic_tool(asset, by_id.get(asset.asset_id))
            findings = forensic_cache[asset.asset_id]
            step_id = rt.record_step(
                ToolKind.FORENSIC_CHECK.value, {"asset": asset.asset_id}, findings.as_dict()
            )
            details = "; ".join(findings.artifacts) if findings.artifacts else "no artifacts noted"
            rt.add_evidence(
                stance=Stance.RELATED,
                claim_ids=(),
                content=(
                    f"Forensic check of {asset.asset_id}: {findings.authenticity.value}; {details}"
                ),
                source=rt.asset_source(asset.asset_id, findings.authenticity.value),
                context=None,
                step_id=step_id,
            )

    def reverse_image_tool(rt: SectionRun) -> None:
        if rt.iteration > 0:
            return
        for asset in ordered_assets:
            analysis = by_id.get(asset.asset_id)
            if isinstance(analysis, VideoAnalysis):
                frames = [kf for kf in analysis.keyframes if kf.image_path is not None]
                if not frames:
                    continue
                top = max(frames, key=lambda kf: (kf.score, -kf.t_s))
                if not rt.charge():
                    return
                image_bytes = top.image_path.read_bytes()  # type: ignore[union-attr]
                try:
                    results = rt.gateway.reverse_image_search(image_bytes)
                except _GATEWAY_ERRORS as exc:
                    rt.record_failure(
                        ToolKind.REVERSE_IMAGE_SEARCH.value, {"keyframe": top.slug}, exc
                    )
                    continue
                step_id = rt.record_step(
                    ToolKind.REVERSE_IMAGE_SEARCH.value,
                    image_bytes,
                    [r.as_dict() for r in results],
                    note=f"keyframe {top.slug}",
                )
                label = f"Reverse image search match for {top.slug}"
            elif isinstance(analysis, ImageAnalysis):
                if not rt.charge():
                    return
                results = list(analysis.matches)
                step_id = rt.record_step(
                    ToolKind.REVERSE_IMAGE_SEARCH.value,
                    {"asset": asset.asset_id},
                    [r.as_dict() for r in results],
                    note="matches from media analysis",
                )
                label = f"Reverse image search match for {asset.asset_id}"
            else:
                continue
            for result in results[:RIS_RESULTS_PER_ASSET]:
                surface = f"{result.title}\n{result.snippet}"
                try:
                    context = extract_source_context(result, result.snippet)
                except UnextractableSource:
                    context = None
                rt.add_result_evidence(result, context, surface, label, step_id)

    registry = ToolRegistry()
    registry.register(ToolKind.KEYWORD_SEARCH, _keyword_search_tool)
    registry.register(ToolKind.VERIFIED_NEWS_5W, _deep_source_tool)
    registry.register(ToolKind.FACT_CHECK_LOOKUP, _fact_check_tool)
    registry.register(ToolKind.METADATA_ANALYSIS, metadata_tool)
    registry.register(ToolKind.FORENSIC_CHECK, forensic_tool)
    registry.register(ToolKind.REVERSE_IMAGE_SEARCH, reverse_image_tool)
    return registry


def _section_tool_order(section: Section, claims: Sequence[Claim]) -> list[ToolKind]:
    ordered = list(ROUTING[section.category])
    for claim in claims:
        for kind in claim.tools:
            if kind not in ordered:
                ordered.append(kind)
    return ordered


def research_section(
    section: Section,
    claims: Sequence[Claim],
    registry: ToolRegistry,
    gateway: ProviderGateway,
    budget: ResearchBudget | None = None,
    *,
    trust: TrustTable | None = None,
    scoring: ScoringParams | None = None,
    clock=None,
    parents: Sequence[str] = (),
) -> SectionResearch:
    """Run the research loop for one section.

    ``claims`` must be exactly the section's claims.  Returns all
    gathered evidence and the provenance chain; never raises on budget
    exhaustion or individual tool failures.  An iteration in which every
    tool call failed is treated as a gateway outage: the section stops
    with partial results flagged.
    """
    if {c.claim_id for c in claims} != set(section.claim_ids):
        raise ValueError("claims do not match section claim_ids")
    budget = budget if budget is not None else ResearchBudget()
    trust = trust if trust is not None else TrustTable()
    scoring = scoring if scoring is not None else ScoringParams()
    clock = clock if clock is not None else gateway.clock

    tool_order = _section_tool_order(section, claims)
    tools = [(kind, registry.get(kind)) for kind in tool_order]

    rt = SectionRun(section, claims, gateway, budget, trust, scoring, clock, parents)
    rt.record_step(
        "section",
        {"section_id": section.section_id, "claim_ids": list(section.claim_ids)},
        {"tools": [kind.value for kind in tool_order]},
        note=f"research start: {section.section_id}",
    )

    iterations_run = 0
    if claims:
        for iteration in range(budget.max_iterations):
            rt.iteration = iteration
            rt.iteration_units = 0
            rt.iteration_failures = 0
            prior_contexts = [ev.context for ev in rt.evidence if ev.context is not None]
            queries = generate_queries(
                section, claims, prior_contexts, iteration, rt.issued_queries
            )
            rt.current_queries = queries
            for query in queries:
                rt.issued_queries.add(query.text)
            for _, tool in tools:
                tool(rt)
                if rt.exhausted:
                    break
            iterations_run = iteration + 1
            # every call this iteration failed: treat as an outage, keep partials
            if rt.iteration_units > 0 and rt.iteration_failures == rt.iteration_units:
                break
            if rt.exhausted or not rt.uncovered():
                break

    uncovered = rt.uncovered() if claims else []
    final_evidence = list(rt.evidence)
    if uncovered:
        flagged: list[Evidence] = []
        uncovered_set = set(uncovered)
        for ev in final_evidence:
            if uncovered_set.intersection(ev.claim_ids):
                flagged.append(replace(ev, coverage_gap=True))
            else:
                flagged.append(ev)
        final_evidence = flagged
    return SectionResearch(
        section_id=section.section_id,
        evidence=tuple(final_evidence),
        records=tuple(rt.records),
        iterations_run=iterations_run,
        tool_calls=rt.tool_calls,
        coverage_gap=bool(uncovered),
        uncovered_claims=tuple(uncovered),
    )


def validate_provenance(records: Sequence[ProvenanceRecord]) -> None:
    """Check a full pipeline provenance set.

    Rules: unique step ids; every parent exists and precedes its child
    (append order is topological order, so the graph is acyclic by
    construction); timestamps never decrease along an edge; the first
    record is the only root and every other record is reachable from it.
    """
    if not records:
        raise ProvenanceInvalid("empty record set")
    position: dict[str, int] = {}
    for i, record in enumerate(records):
        if record.step_id in position:
            raise ProvenanceInvalid(f"duplicate step id {record.step_id}")
        position[record.step_id] = i
    if records[0].parents:
        raise ProvenanceInvalid(f"first record {records[0].step_id} is not a root")
    for i, record in enumerate(records):
        if i > 0 and not record.parents:
            raise ProvenanceInvalid(f"{record.step_id} is unreachable (no parents)")
        for parent in record.parents:
            if parent not in position:
                raise ProvenanceInvalid(f"{record.step_id} references unknown parent {parent}")
            j = position[parent]
            if j >= i:
                raise ProvenanceInvalid(f"{record.step_id} appears before its parent {parent}")
            if records[j].timestamp > record.timestamp:
                raise ProvenanceInvalid(f"timestamp of {record.step_id} precedes parent {parent}")
