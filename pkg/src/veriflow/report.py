"""Stage 6: report generation.

A finished case produces two artifacts from one report object: a
markdown document for people and a structured twin for machines.  The
twin is lossless: serializing a report and parsing it back yields an
equal report, and regenerating markdown from the parsed twin yields the
identical document.

Layout contract for the markdown:

* exactly five top-level headings, in a fixed order;
* source details rendered under fixed five-question labels;
* dates shown day-first (DD/MM/YYYY) in markdown, ISO-8601 in the twin;
* evidence citations as ``[ev-...]`` tokens, each resolving to an item
  in the evidence store the report was built from;
* evidence images as ``![Evidence Image](report/<slug>.jpg)`` lines.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

from . import cues
from .errors import VeriflowError
from .evidence import EvidenceCategory, FinalizedStore, Stance
from .media import ImageAnalysis, VideoAnalysis

if TYPE_CHECKING:
    from .case_ingest import CasePackage
    from .gateway import Clock
    from .planner import VerificationPlan
    from .researcher import ForensicFindings

REPORT_SCHEMA_VERSION = 1

HEADINGS = (
    "# Case Summary",
    "# Content Classification",
    "# Verified Evidence",
    "# Forensic Analysis",
    "# Other Evidence & Findings",
)

LABEL_SOURCE = "Source Details:"
LABEL_WHERE = "Where? (Location):"
LABEL_WHEN = "When? (Time):"
LABEL_WHO = "Who? (Entities Involved):"
LABEL_WHY = "Why? (Motivation or Intent):"

RELATED_ITEM_LIMIT = 8

_CITATION_RE = re.compile(r"\[(ev-[a-z]+-\d{4})\]")
_LOOSE_CITATION_RE = re.compile(r"\[ev-[^\]]*\]")
_IMAGE_LINE_RE = re.compile(r"!\[Evidence Image\]\((report/[^)]+\.jpg)\)")


class MalformedReport(VeriflowError):
    """A report document or twin violated the layout contract."""


class UnresolvedCitation(VeriflowError):
    """A report cites an evidence id missing from the store."""


@dataclass(frozen=True)
class WhereSummary:
    place_name: str | None = None
    lat: float | None = None
    lon: float | None = None

    def __post_init__(self) -> None:
        if (self.lat is None) != (self.lon is None):
            raise ValueError("lat and lon must be set together")
        if self.place_name is None and self.lat is None:
            raise ValueError("an empty location summary is not allowed")

    def rendered(self) -> str:
        if self.place_name and self.lat is not None:
            return f"{self.place_name} ({cues.format_coords(self.lat, self.lon)})"
        if self.lat is not None:
            return cues.format_coords(self.lat, self.lon)
        return self.place_name or ""

    def as_dict(self) -> dict:
        return {"place_name": self.place_name, "lat": self.lat, "lon": self.lon}


@dataclass(frozen=True)
class WhenSummary:
    date: dt.date
    time: dt.time | None = None

    def rendered(self) -> str:
        out = cues.format_date_dmy(self.date)
        if self.time is not None:
            out += f" {cues.format_time(self.time)}"
        return out

    def as_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "time": self.time.isoformat() if self.time else None,
        }


@dataclass(frozen=True)
class FiveW:
    """The five source-detail answers for one verified item."""

    source_detail: str | None = None
    where: WhereSummary | None = None
    when: WhenSummary | None = None
    who: str | None = None
    why: str | None = None

    def as_dict(self) -> dict:
        return {
            "source_detail": self.source_detail,
            "where": self.where.as_dict() if self.where else None,
            "when": self.when.as_dict() if self.when else None,
            "who": self.who,
            "why": self.why,
        }


@dataclass(frozen=True)
class ClassificationEntry:
    asset_id: str
    media_kind: str  # "video" or "image"
    summary: str
    duration_s: float | None = None
    resolution: str | None = None
    codec: str | None = None

    def as_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "media_kind": self.media_kind,
            "summary": self.summary,
            "duration_s": self.duration_s,
            "resolution": self.resolution,
            "codec": self.codec,
        }


@dataclass(frozen=True)
class VerifiedItem:
    claim_id: str
    claim_text: str
    statement: str
    citations: tuple[str, ...]
    five_w: FiveW
    image_slugs: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "claim_text": self.claim_text,
            "statement": self.statement,
            "citations": list(self.citations),
            "five_w": self.five_w.as_dict(),
            "image_slugs": list(self.image_slugs),
        }


@dataclass(frozen=True)
class ForensicSection:
    authenticity: str
    synthetic_type: str | None
    artifacts: tuple[str, ...]
    methods: tuple[str, ...]
    notes: tuple[tuple[str, str], ...]  # (note text, citation id)

    def as_dict(self) -> dict:
        return {
            "authenticity": self.authenticity,
            "synthetic_type": self.synthetic_type,
            "artifacts": list(self.artifacts),
            "methods": list(self.methods),
            "notes": [[text, cite] for text, cite in self.notes],
        }


@dataclass(frozen=True)
class OtherItem:
    kind: str  # "DisputedClaim", "RelatedInformation", "CoverageGap", "Unverified"
    text: str
    citations: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {"kind": self.kind, "text": self.text, "citations": list(self.citations)}


@dataclass(frozen=True)
class VerificationReport:
    case_id: str
    verdict_status: str
    summary: str
    classification: tuple[ClassificationEntry, ...]
    verified: tuple[VerifiedItem, ...]
    forensic: ForensicSection
    other: tuple[OtherItem, ...]
    generated_at: dt.datetime

    def citations(self) -> list[str]:
        """Every evidence id cited anywhere, in order of appearance."""
        out: list[str] = []
        for item in self.verified:
            out.extend(item.citations)
        out.extend(cite for _, cite in self.forensic.notes)
        for item in self.other:
            out.extend(item.citations)
        return out


def validate_citations(report: VerificationReport, store: FinalizedStore) -> None:
    known = {ev.evidence_id for ev in store.items}
    missing = [cite for cite in report.citations() if cite not in known]
    if missing:
        raise UnresolvedCitation(f"citations missing from store: {', '.join(sorted(set(missing)))}")


# -- building -----------------------------------------------------------


def _classification_entries(
    analyses: Sequence[VideoAnalysis | ImageAnalysis],
) -> list[ClassificationEntry]:
    entries: list[ClassificationEntry] = []
    for analysis in sorted(analyses, key=lambda a: a.asset_id):
        if isinstance(analysis, VideoAnalysis):
            if analysis.descriptions:
                summary = cues.first_informative_sentence(analysis.descriptions[0].text) or "video"
            else:
                summary = "video without scene description"
            resolution = (
                f"{analysis.resolution[0]}x{analysis.resolution[1]}"
                if analysis.resolution
                else None
            )
            entries.append(
                ClassificationEntry(
                    asset_id=analysis.asset_id,
                    media_kind="video",
                    summary=summary,
                    duration_s=round(analysis.duration_s, 2),
                    resolution=resolution,
                    codec=analysis.codec,
                )
            )
        else:
            parts = ["photograph"]
            if analysis.camera:
                parts.append(f"camera {analysis.camera}")
            entries.append(
                ClassificationEntry(
                    asset_id=analysis.asset_id,
                    media_kind="image",
                    summary=", ".join(parts),
                    resolution=f"{analysis.resolution[0]}x{analysis.resolution[1]}",
                )
            )
    return entries


def _merge_five_w(citing) -> FiveW:
    source_detail = where = when = who = why = None
    for ev in citing:
        ctx = ev.context
        if ctx is None:
            continue
        if source_detail is None and ctx.source_detail:
            source_detail = ctx.source_detail
        if where is None and ctx.where is not None:
            geo = ctx.where.geo
            where = WhereSummary(
                place_name=ctx.where.place_name or None,
                lat=geo.lat if geo else None,
                lon=geo.lon if geo else None,
            )
        if when is None and ctx.when is not None:
            when = WhenSummary(date=ctx.when.date, time=ctx.when.time)
        if who is None and ctx.who:
            who = ctx.who
        if why is None and ctx.why:
            why = ctx.why
    return FiveW(source_detail=source_detail, where=where, when=when, who=who, why=why)


def _keyframe_slugs_for(citing, analyses_by_id: Mapping[str, object]) -> tuple[str, ...]:
    slugs: dict[str, None] = {}
    asset_ids = sorted(
        {ev.source.url.split(":", 1)[1] for ev in citing if ev.source.url.startswith("asset:")}
    )
    for asset_id in asset_ids:
        analysis = analyses_by_id.get(asset_id)
        if isinstance(analysis, VideoAnalysis) and analysis.keyframes:
            top = max(analysis.keyframes, key=lambda kf: (kf.score, -kf.t_s))
            slugs.setdefault(top.slug, None)
    return tuple(slugs)


def build_report(
    case: "CasePackage",
    plan: "VerificationPlan",
    store: FinalizedStore,
    analyses: Sequence[VideoAnalysis | ImageAnalysis],
    forensics: "ForensicFindings",
    *,
    clock: "Clock | None" = None,
) -> VerificationReport:
    """Assemble the report for one finished case.

    Claims appear in plan order.  Every citation written into the report
    is checked against the store before returning.
    """
    from .gateway import RealClock

    clock = clock if clock is not None else RealClock()
    verdict = store.verdict
    analyses_by_id = {a.asset_id: a for a in analyses}

    posts = case.context.posts
    if posts:
        lead = cues.first_informative_sentence(posts[0].text) or posts[0].text
        origin = f"{cues.normalize_ws(lead)} Source: {posts[0].url}."
    elif case.context.captions:
        origin = cues.normalize_ws(case.context.captions[0])
    elif case.context.articles and case.context.articles[0].title:
        origin = cues.normalize_ws(case.context.articles[0].title)
    else:
        origin = "No contextual description supplied."
    if origin and not origin.endswith("."):
        origin += "."
    summary = (
        f"Case {case.case_id}: {origin} "
        f"Verdict: {verdict.status.value}. {verdict.rationale}"
    )

    verified_items: list[VerifiedItem] = []
    verified_set = set(verdict.verified_claims)
    for claim in plan.claims:
        if claim.claim_id not in verified_set:
            continue
        citing = sorted(
            (
                ev
                for ev in store.items
                if claim.claim_id in ev.claim_ids and ev.stance is Stance.SUPPORTS
            ),
            key=lambda ev: (-ev.confidence, ev.evidence_id),
        )
        domains = {ev.domain for ev in citing}
        text = cues.normalize_ws(claim.text)
        if not text.endswith("."):
            text += "."
        noun = "source" if len(domains) == 1 else "sources"
        statement = f"Verified by {len(domains)} independent {noun}."
        verified_items.append(
            VerifiedItem(
                claim_id=claim.claim_id,
                claim_text=text,
                statement=statement,
                citations=tuple(ev.evidence_id for ev in citing),
                five_w=_merge_five_w(citing),
                image_slugs=_keyframe_slugs_for(citing, analyses_by_id),
            )
        )

    forensic_notes: list[tuple[str, str]] = []
    for ev in sorted(store.items, key=lambda e: e.evidence_id):
        if ev.content.startswith("Forensic check of"):
            forensic_notes.append((ev.content, ev.evidence_id))
    forensic_section = ForensicSection(
        authenticity=forensics.authenticity.value,
        synthetic_type=forensics.synthetic_type,
        artifacts=tuple(forensics.artifacts),
        methods=tuple(forensics.methods),
        notes=tuple(forensic_notes),
    )

    other: list[OtherItem] = []
    claim_text_by_id = {c.claim_id: cues.normalize_ws(c.text) for c in plan.claims}
    conflict_ids: dict[str, list[str]] = {}
    conflict_reasons: dict[str, set[str]] = {}
    for pair in store.conflicts:
        ids = conflict_ids.setdefault(pair.claim_id, [])
        for ev_id in (pair.evidence_a, pair.evidence_b):
            if ev_id not in ids:
                ids.append(ev_id)
        conflict_reasons.setdefault(pair.claim_id, set()).add(pair.reason)
    for claim in plan.claims:
        if claim.claim_id in verdict.disputed_claims:
            reasons = "/".join(sorted(conflict_reasons.get(claim.claim_id, {"stance"})))
            other.append(
                OtherItem(
                    kind="DisputedClaim",
                    text=(
                        f"{claim.claim_id}: {claim_text_by_id[claim.claim_id]} "
                        f"(conflicting evidence: {reasons})"
                    ),
                    citations=tuple(sorted(conflict_ids.get(claim.claim_id, []))),
                )
            )
    for claim in plan.claims:
        if claim.claim_id in verdict.unverified_claims:
            other.append(
                OtherItem(
                    kind="Unverified",
                    text=(
                        f"{claim.claim_id}: {claim_text_by_id[claim.claim_id]} "
                        "(insufficient corroboration)"
                    ),
                )
            )
    for claim_id in store.gaps:
        text = claim_text_by_id.get(claim_id, claim_id)
        other.append(
            OtherItem(
                kind="CoverageGap",
                text=f"{claim_id}: {text} (research budget exhausted before full coverage)",
            )
        )
    forensic_note_ids = {cite for _, cite in forensic_notes}
    related = sorted(
        (
            ev
            for ev in store.items
            if ev.category is EvidenceCategory.RELATED_INFORMATION
            and ev.evidence_id not in forensic_note_ids
        ),
        key=lambda ev: (-ev.confidence, ev.evidence_id),
    )
    seen_content: set[str] = set()
    picked = 0
    for ev in related:
        if picked >= RELATED_ITEM_LIMIT:
            break
        if ev.content in seen_content:
            continue
        seen_content.add(ev.content)
        picked += 1
        other.append(
            OtherItem(
                kind="RelatedInformation", text=ev.content, citations=(ev.evidence_id,)
            )
        )

    report = VerificationReport(
        case_id=case.case_id,
        verdict_status=verdict.status.value,
        summary=summary,
        classification=tuple(_classification_entries(analyses)),
        verified=tuple(verified_items),
        forensic=forensic_section,
        other=tuple(other),
        generated_at=clock.now(),
    )
    validate_citations(report, store)
    return report


# -- rendering ----------------------------------------------------------


def _cite_suffix(citations: Sequence[str]) -> str:
    return "".join(f" [{c}]" for c in citations)


def to_markdown(report: VerificationReport) -> str:
    """Render the markdown document; layout is fixed, line for line."""
    lines: list[str] = []
    lines.append(HEADINGS[0])
    lines.append("")
    lines.append(report.summary)
    lines.append("")

    lines.append(HEADINGS[1])
    lines.append("")
    for entry in report.classification:
        details = [entry.media_kind]
        if entry.duration_s is not None:
            details.append(f"{entry.duration_s:.2f}s")
        if entry.resolution:
            details.append(entry.resolution)
        if entry.codec:
            details.append(entry.codec)
        lines.append(f"- {entry.asset_id} ({', '.join(details)}): {entry.summary}")
    if not report.classification:
        lines.append("No media assets.")
    lines.append("")

    lines.append(HEADINGS[2])
    lines.append("")
    for item in report.verified:
        lines.append(f"## {item.claim_id}: {item.claim_text}")
        lines.append("")
        lines.append(f"{item.statement}{_cite_suffix(item.citations)}")
        if item.five_w.source_detail:
            lines.append(f"{LABEL_SOURCE} {item.five_w.source_detail}")
        if item.five_w.where:
            lines.append(f"{LABEL_WHERE} {item.five_w.where.rendered()}")
        if item.five_w.when:
            lines.append(f"{LABEL_WHEN} {item.five_w.when.rendered()}")
        if item.five_w.who:
            lines.append(f"{LABEL_WHO} {item.five_w.who}")
        if item.five_w.why:
            lines.append(f"{LABEL_WHY} {item.five_w.why}")
        for slug in item.image_slugs:
            lines.append(f"![Evidence Image](report/{slug}.jpg)")
        lines.append("")
    if not report.verified:
        lines.append("No claims reached the verification threshold.")
        lines.append("")

    lines.append(HEADINGS[3])
    lines.append("")
    lines.append(f"Authenticity: {report.forensic.authenticity}")
    if report.forensic.synthetic_type:
        lines.append(f"Suspected manipulation: {report.forensic.synthetic_type}")
    lines.append(f"Methods: {'; '.join(report.forensic.methods)}")
    if report.forensic.artifacts:
        lines.append(f"Artifacts: {'; '.join(report.forensic.artifacts)}")
    for text, cite in report.forensic.notes:
        lines.append(f"- {text} [{cite}]")
    lines.append("")

    lines.append(HEADINGS[4])
    lines.append("")
    for item in report.other:
        lines.append(f"- {item.kind}: {item.text}{_cite_suffix(item.citations)}")
    if not report.other:
        lines.append("No additional findings.")
    lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class ReportStructure:
    """Shape of a parsed markdown report: headings, per-section bodies,
    and every citation and image reference in order of appearance."""

    headings: tuple[str, ...]
    sections: Mapping[str, str]
    citations: tuple[str, ...]
    image_paths: tuple[str, ...]


def parse_markdown_structure(document: str) -> ReportStructure:
    """Validate a markdown report's layout and index its parts.

    Raises MalformedReport when the five top-level headings are wrong or
    out of order, when a citation token is malformed, or when an
    evidence-image line does not follow the fixed pattern.
    """
    lines = document.split("\n")
    headings = [line for line in lines if line.startswith("# ")]
    if tuple(headings) != HEADINGS:
        raise MalformedReport(
            f"expected headings {list(HEADINGS)}, found {headings}"
        )
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in lines:
        if line in HEADINGS:
            current = line
            sections[current] = []
        elif current is not None:
            sections[current].append(line)

    for token in _LOOSE_CITATION_RE.findall(document):
        if not _CITATION_RE.fullmatch(token):
            raise MalformedReport(f"malformed citation token {token}")
    for line in lines:
        if line.startswith("!["):
            if not _IMAGE_LINE_RE.fullmatch(line):
                raise MalformedReport(f"malformed evidence image line: {line}")
    citations = tuple(_CITATION_RE.findall(document))
    images = tuple(m.group(1) for m in _IMAGE_LINE_RE.finditer(document))
    return ReportStructure(
        headings=tuple(headings),
        sections={k: "\n".join(v).strip() for k, v in sections.items()},
        citations=citations,
        image_paths=images,
    )


# -- the structured twin ------------------------------------------------


def to_structured(report: VerificationReport) -> dict:
    """The machine-readable twin; lossless against from_structured."""
    return {
        "report_schema": REPORT_SCHEMA_VERSION,
        "case_id": report.case_id,
        "verdict": report.verdict_status,
        "generated_at": report.generated_at.isoformat(),
        "summary": report.summary,
        "classification": [entry.as_dict() for entry in report.classification],
        "verified": [item.as_dict() for item in report.verified],
        "forensic": report.forensic.as_dict(),
        "other": [item.as_dict() for item in report.other],
    }


def _opt_str(value: object, path: str) -> str | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise MalformedReport(f"{path}: expected string or null")
    return value


def from_structured(data: Mapping) -> VerificationReport:
    """Rebuild a report from its twin; strict about schema and shapes."""
    try:
        if data["report_schema"] != REPORT_SCHEMA_VERSION:
            raise MalformedReport(f"unsupported report schema {data['report_schema']!r}")
        classification = tuple(
            ClassificationEntry(
                asset_id=entry["asset_id"],
                media_kind=entry["media_kind"],
                summary=entry["summary"],
                duration_s=entry["duration_s"],
                resolution=entry["resolution"],
                codec=entry["codec"],
            )
            for entry in data["classification"]
        )
        verified = []
        for item in data["verified"]:
            raw_w = item["five_w"]
            where = None
            if raw_w["where"] is not None:
                where = WhereSummary(
                    place_name=raw_w["where"]["place_name"],
                    lat=raw_w["where"]["lat"],
                    lon=raw_w["where"]["lon"],
                )
            when = None
            if raw_w["when"] is not None:
                when = WhenSummary(
                    date=dt.date.fromisoformat(raw_w["when"]["date"]),
                    time=(
                        dt.time.fromisoformat(raw_w["when"]["time"])
                        if raw_w["when"]["time"]
                        else None
                    ),
                )
            verified.append(
                VerifiedItem(
                    claim_id=item["claim_id"],
                    claim_text=item["claim_text"],
                    statement=item["statement"],
                    citations=tuple(item["citations"]),
                    five_w=FiveW(
                        source_detail=_opt_str(raw_w["source_detail"], "five_w.source_detail"),
                        where=where,
                        when=when,
                        who=_opt_str(raw_w["who"], "five_w.who"),
                        why=_opt_str(raw_w["why"], "five_w.why"),
                    ),
                    image_slugs=tuple(item["image_slugs"]),
                )
            )
        raw_forensic = data["forensic"]
        forensic = ForensicSection(
            authenticity=raw_forensic["authenticity"],
            synthetic_type=_opt_str(raw_forensic["synthetic_type"], "forensic.synthetic_type"),
            artifacts=tuple(raw_forensic["artifacts"]),
            methods=tuple(raw_forensic["methods"]),
            notes=tuple((text, cite) for text, cite in raw_forensic["notes"]),
        )
        other = tuple(
            OtherItem(kind=item["kind"], text=item["text"], citations=tuple(item["citations"]))
            for item in data["other"]
        )
        return VerificationReport(
            case_id=data["case_id"],
            verdict_status=data["verdict"],
            summary=data["summary"],
            classification=classification,
            verified=tuple(verified),
            forensic=forensic,
            other=other,
            generated_at=dt.datetime.fromisoformat(data["generated_at"]),
        )
    except KeyError as exc:
        raise MalformedReport(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedReport(str(exc)) from None
