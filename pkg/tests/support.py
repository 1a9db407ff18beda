"""Shared test helpers and independent oracles.

The oracles here deliberately avoid the package's own implementations:
the confidence oracle redoes the arithmetic from scratch, the conflict
oracle is a naive pairwise scan with its own great-circle distance, and
the cut-video builder knows its cut frame by construction.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import math
import random
from pathlib import Path

import cv2
import numpy as np

from veriflow import (
    Evidence,
    EvidenceCategory,
    GeoPoint,
    SearchResult,
    SourceAssessment,
    SourceContext,
    Stance,
    WhenContext,
    WhereContext,
)

UTC = dt.timezone.utc
FIXED_NOW = dt.datetime(2024, 1, 1, tzinfo=UTC)


def sha256_tree(root: Path) -> dict[str, str]:
    """Relative path -> content digest for every file under root."""
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# ---------------------------------------------------------------------------
# confidence oracle

def oracle_confidence(
    reliability: float, s: int, c: int, w_r: float = 0.5, w_c: float = 0.5
) -> float:
    value = w_r * reliability + w_c * ((s + 1) / (s + c + 2))
    if value < 0.0:
        return 0.0
    if value > 1.0:
        return 1.0
    return value


# ---------------------------------------------------------------------------
# conflict oracle

def oracle_distance_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    # spherical law of cosines, not the haversine form the package uses
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dlon = math.radians(lon2 - lon1)
    cosine = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dlon)
    return 6371.0 * math.acos(max(-1.0, min(1.0, cosine)))


def oracle_conflicts(corpus: list[Evidence]) -> set[tuple[str, str, str, str]]:
    """Naive pairwise scan: every (a, b, claim, reason) disagreement."""
    found: set[tuple[str, str, str, str]] = set()
    for i in range(len(corpus)):
        for j in range(len(corpus)):
            if i == j:
                continue
            a, b = corpus[i], corpus[j]
            shared = set(a.claim_ids) & set(b.claim_ids)
            if not shared:
                continue
            first, second = sorted((a.evidence_id, b.evidence_id))
            for cid in shared:
                da = a.context.when.date if a.context and a.context.when else None
                db = b.context.when.date if b.context and b.context.when else None
                if da is not None and db is not None and da != db:
                    found.add((first, second, cid, "date"))
                ga = a.context.where.geo if a.context and a.context.where else None
                gb = b.context.where.geo if b.context and b.context.where else None
                if ga is not None and gb is not None:
                    if oracle_distance_km(ga.lat, ga.lon, gb.lat, gb.lon) > 50.0:
                        found.add((first, second, cid, "location"))
                stances = {a.stance, b.stance}
                if stances == {Stance.SUPPORTS, Stance.CONTRADICTS}:
                    found.add((first, second, cid, "stance"))
    return found


# ---------------------------------------------------------------------------
# evidence factory

def make_result(url: str, title: str = "t", snippet: str = "s") -> SearchResult:
    return SearchResult(
        url=url,
        title=title,
        snippet=snippet,
        publisher=None,
        published_at=None,
        retrieved_at=FIXED_NOW,
    )


def make_evidence(
    evidence_id: str,
    url: str,
    claim_ids: tuple[str, ...] = ("c01",),
    stance: Stance = Stance.SUPPORTS,
    *,
    date: dt.date | None = None,
    geo: tuple[float, float] | None = None,
    reliability: float = 0.5,
    confidence: float = 0.5,
    content: str = "finding",
    section_id: str = "sec-temporal",
    category: EvidenceCategory = EvidenceCategory.RELATED_INFORMATION,
    coverage_gap: bool = False,
) -> Evidence:
    when = WhenContext(date=date) if date is not None else None
    where = (
        WhereContext(place_name="spot", geo=GeoPoint(lat=geo[0], lon=geo[1]))
        if geo is not None
        else None
    )
    context = None
    if when is not None or where is not None:
        context = SourceContext(where=where, when=when)
    return Evidence(
        evidence_id=evidence_id,
        section_id=section_id,
        claim_ids=claim_ids,
        stance=stance,
        category=category,
        content=content,
        source=make_result(url),
        context=context,
        assessment=SourceAssessment(reliability=reliability),
        confidence=confidence,
        step_id="st-test",
        coverage_gap=coverage_gap,
    )


def random_corpus(rng: random.Random, n: int) -> list[Evidence]:
    """A random but structurally valid evidence corpus for conflict tests."""
    claims = ["c01", "c02", "c03"]
    dates = [None, dt.date(2022, 5, 4), dt.date(2022, 5, 5), dt.date(2021, 1, 1)]
    # two tight clusters far apart plus a near-by pair inside 50 km
    geos = [
        None,
        (48.46, 35.04),
        (48.52, 35.10),
        (50.45, 30.52),
        (-33.86, 151.20),
    ]
    stances = [Stance.SUPPORTS, Stance.CONTRADICTS, Stance.RELATED]
    out: list[Evidence] = []
    for i in range(n):
        chosen = tuple(sorted(rng.sample(claims, k=rng.randint(1, 2))))
        stance = rng.choice(stances)
        out.append(
            make_evidence(
                f"ev-test-{i:04d}",
                f"https://site{i}.example/a",
                claim_ids=chosen if stance is not Stance.RELATED or chosen else (),
                stance=stance,
                date=rng.choice(dates),
                geo=rng.choice(geos),
            )
        )
    return out


# ---------------------------------------------------------------------------
# synthetic videos with a known cut

def _scene_frame(
    rng: np.random.Generator, base: np.ndarray, size: tuple[int, int]
) -> np.ndarray:
    # per-frame jitter well below the cross-cut difference
    noise = rng.integers(-6, 7, size=(size[1], size[0], 3), dtype=np.int16)
    return np.clip(base.astype(np.int16) + noise, 0, 255).astype(np.uint8)


def make_cut_video(
    path: Path,
    pre_frames: int,
    post_frames: int,
    *,
    fps: float = 10.0,
    size: tuple[int, int] = (96, 64),
    seed: int = 0,
) -> int:
    """Write a two-scene video; returns the first frame index of scene two."""
    rng = np.random.default_rng(seed)
    width, height = size
    ramp = np.linspace(0, 120, width, dtype=np.uint8)
    scene_a = np.zeros((height, width, 3), np.uint8)
    scene_a[:] = (40, 60, 80)
    scene_a[:, :, 1] += ramp[None, :] // 2
    scene_b = np.zeros((height, width, 3), np.uint8)
    scene_b[:] = (210, 160, 30)
    scene_b[height // 3 : 2 * height // 3, :, 2] = 240
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height)
    )
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video writer for {path}")
    try:
        for _ in range(pre_frames):
            writer.write(_scene_frame(rng, scene_a, size))
        for _ in range(post_frames):
            writer.write(_scene_frame(rng, scene_b, size))
    finally:
        writer.release()
    return pre_frames


def make_constant_video(
    path: Path, frames: int, *, fps: float = 10.0, size: tuple[int, int] = (96, 64)
) -> None:
    width, height = size
    frame = np.full((height, width, 3), 127, np.uint8)
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height)
    )
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video writer for {path}")
    try:
        for _ in range(frames):
            writer.write(frame)
    finally:
        writer.release()


# ---------------------------------------------------------------------------
# randomized but always-valid reports

_CLAIM_TEXTS = [
    "The footage was recorded on 04/05/2022.",
    "The strike hit the city of Dnipro.",
    "The video was first shared by @cesarnews4.",
    "Rescue workers responded to the aftermath.",
    "The clip shows smoke rising over rooftops.",
]

_STATEMENTS = [
    "Verified by 2 independent sources.",
    "Verified by 3 independent sources.",
    "Confirmed against container metadata.",
]

_NOTE_TEXTS = [
    "No duplicated frame spans found.",
    "Overlay timeline agrees with container metadata.",
    "Minor compression artifacts noted.",
]

_OTHER_KINDS = ["DisputedClaim", "RelatedInformation", "CoverageGap", "Unverified"]


def _random_five_w(rng: random.Random):
    from veriflow.report import FiveW, WhenSummary, WhereSummary

    where = None
    if rng.random() < 0.7:
        if rng.random() < 0.5:
            where = WhereSummary(place_name="Dnipro", lat=48.4647, lon=35.0462)
        else:
            where = WhereSummary(place_name="Kharkiv")
    when = None
    if rng.random() < 0.7:
        when = WhenSummary(
            date=dt.date(2022, rng.randint(1, 12), rng.randint(1, 28)),
            time=dt.time(rng.randint(0, 23), rng.randint(0, 59), rng.randint(0, 59))
            if rng.random() < 0.5
            else None,
        )
    return FiveW(
        source_detail="Local news coverage." if rng.random() < 0.6 else None,
        where=where,
        when=when,
        who="@cesarnews4" if rng.random() < 0.5 else None,
        why="To document the events." if rng.random() < 0.3 else None,
    )


def random_report(rng: random.Random):
    """A structurally valid report with randomized content."""
    from veriflow.report import (
        ClassificationEntry,
        ForensicSection,
        OtherItem,
        VerificationReport,
        VerifiedItem,
    )

    def ev_id(i: int) -> str:
        return f"ev-{rng.choice(['temporal', 'geographic', 'entity', 'contextual'])}-{i:04d}"

    classification = tuple(
        ClassificationEntry(
            asset_id=f"V{i + 1}.mp4" if kind == "video" else f"P{i + 1}.jpg",
            media_kind=kind,
            summary=rng.choice(_CLAIM_TEXTS),
            duration_s=round(rng.uniform(1, 60), 2) if kind == "video" else None,
            resolution=rng.choice(["320x180", "1280x720", None]),
            codec="mp42" if kind == "video" and rng.random() < 0.5 else None,
        )
        for i, kind in enumerate(
            rng.choices(["video", "image"], k=rng.randint(1, 3))
        )
    )
    counter = iter(range(1, 100))
    verified = tuple(
        VerifiedItem(
            claim_id=f"c{i + 1:02d}",
            claim_text=rng.choice(_CLAIM_TEXTS),
            statement=rng.choice(_STATEMENTS),
            citations=tuple(ev_id(next(counter)) for _ in range(rng.randint(1, 3))),
            five_w=_random_five_w(rng),
            image_slugs=("V1.mp4_00_02_2.50s",) if rng.random() < 0.4 else (),
        )
        for i in range(rng.randint(0, 3))
    )
    forensic = ForensicSection(
        authenticity=rng.choice(
            ["NoManipulationDetected", "SuspectedManipulation", "Inconclusive"]
        ),
        synthetic_type="possible looped or duplicated frames" if rng.random() < 0.3 else None,
        artifacts=tuple(rng.sample(_NOTE_TEXTS, k=rng.randint(0, 2))),
        methods=("overlay-consistency-check", "duplicate-frame-scan"),
        notes=tuple(
            (rng.choice(_NOTE_TEXTS), ev_id(next(counter)))
            for _ in range(rng.randint(0, 2))
        ),
    )
    other = tuple(
        OtherItem(
            kind=rng.choice(_OTHER_KINDS),
            text=rng.choice(_CLAIM_TEXTS),
            citations=tuple(ev_id(next(counter)) for _ in range(rng.randint(0, 2))),
        )
        for _ in range(rng.randint(0, 4))
    )
    return VerificationReport(
        case_id=f"CASE{rng.randint(1, 99)}",
        verdict_status=rng.choice(
            ["Verified", "PartiallyVerified", "Inconclusive", "Refuted"]
        ),
        summary=f"Case summary sentence {rng.randint(1, 9)}. Verdict follows.",
        classification=classification,
        verified=verified,
        forensic=forensic,
        other=other,
        generated_at=FIXED_NOW,
    )
