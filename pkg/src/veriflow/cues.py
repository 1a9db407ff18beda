"""Deterministic cue extraction from free text.

Small regex-driven helpers shared across the pipeline: calendar dates,
clock times, geographic coordinates, place names, bylines, salient
tokens, and registered web domains.  Everything in here is pure and
order-stable so repeated runs over the same input produce identical
output.

Date policy: numeric dates with separators are read day-first
("04/05/2022" is 4 May 2022).  ISO dates ("2022-05-04") are always
year-month-day.  A numeric date whose first field exceeds 31 or whose
second field exceeds 12 is discarded rather than reinterpreted.
"""

from __future__ import annotations

import datetime as dt
import math
import re
from urllib.parse import urlsplit

# Words that anchor a venue-style place phrase ("Naberezhna Zavodska",
# "Kherson Bridge").  Matched case-insensitively inside capitalized phrases.
VENUE_WORDS = frozenset(
    {
        "street",
        "avenue",
        "bridge",
        "square",
        "boulevard",
        "embankment",
        "naberezhna",
        "vulytsia",
        "prospekt",
        "road",
        "district",
        "oblast",
        "raion",
        "highway",
        "station",
        "port",
        "airport",
        "plaza",
        "quay",
        "riverbank",
        "dam",
    }
)

_MONTHS = frozenset(
    {
        "january",
        "february",
        "march",
        "april",
        "may",
        "june",
        "july",
        "august",
        "september",
        "october",
        "november",
        "december",
    }
)
_WEEKDAYS = frozenset(
    {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}
)

STOPWORDS = frozenset(
    {
        "a",
        "an",
        "and",
        "are",
        "as",
        "at",
        "be",
        "been",
        "but",
        "by",
        "for",
        "from",
        "had",
        "has",
        "have",
        "her",
        "his",
        "in",
        "into",
        "is",
        "it",
        "its",
        "near",
        "не",
        "of",
        "on",
        "or",
        "our",
        "over",
        "that",
        "the",
        "their",
        "then",
        "there",
        "these",
        "they",
        "this",
        "to",
        "under",
        "via",
        "was",
        "were",
        "which",
        "while",
        "who",
        "will",
        "with",
        "you",
    }
)

# Multi-part public suffixes treated as a single registrable unit.  This is a
# deliberately small embedded list, not a full public-suffix database.
_SECOND_LEVEL_SUFFIXES = frozenset(
    {
        "ac.jp",
        "ac.uk",
        "co.in",
        "co.jp",
        "co.kr",
        "co.nz",
        "co.uk",
        "co.za",
        "com.ar",
        "com.au",
        "com.br",
        "com.cn",
        "com.hk",
        "com.mx",
        "com.pl",
        "com.sg",
        "com.tr",
        "com.tw",
        "com.ua",
        "edu.au",
        "edu.ua",
        "go.jp",
        "gov.ua",
        "gov.uk",
        "in.ua",
        "ne.jp",
        "net.au",
        "net.nz",
        "net.uk",
        "or.jp",
        "org.au",
        "org.nz",
        "org.ua",
        "org.uk",
    }
)

_DATE_DMY_RE = re.compile(r"(?<!\d)(\d{1,2})[/.\-](\d{1,2})[/.\-](\d{4})(?!\d)")
_DATE_ISO_RE = re.compile(r"(?<!\d)(\d{4})-(\d{2})-(\d{2})(?!\d)")
_TIME_RE = re.compile(r"(?<![\d:])([01]?\d|2[0-3]):([0-5]\d)(?::([0-5]\d))?(?![\d:])")
_COORD_HEMI_RE = re.compile(
    r"(\d{1,3}(?:\.\d+)?)\s*°?\s*([NS])\s*[,;]?\s+(\d{1,3}(?:\.\d+)?)\s*°?\s*([EW])"
)
_COORD_PLAIN_RE = re.compile(r"(-?\d{1,3}\.\d{3,})\s*,\s*(-?\d{1,3}\.\d{3,})")
_TITLE_WORD = r"[A-Z][a-zA-Z'’\-]+"
_TITLE_PHRASE_RE = re.compile(rf"{_TITLE_WORD}(?:\s+{_TITLE_WORD})*")
_PREP_PLACE_RE = re.compile(
    rf"\b(?:in|at|near|outside|across)\s+({_TITLE_WORD}(?:\s+{_TITLE_WORD}){{0,3}}"
    rf"(?:,\s*{_TITLE_WORD})?)"
)
# "the city of Dnipro"; settlement word may be lowercase mid-sentence
_SETTLEMENT_OF_RE = re.compile(
    rf"\b(?:[Cc]ity|[Tt]own|[Vv]illage|[Pp]ort|[Dd]istrict|[Rr]egion|[Oo]blast)\s+of\s+"
    rf"({_TITLE_WORD}(?:\s+{_TITLE_WORD}){{0,3}})"
)
_BYLINE_VERB_RE = re.compile(
    r"(?:filmed|recorded|captured|posted|published|shared|uploaded|written)\s+by\s+"
    r"([^.;\n!?]+)",
    re.IGNORECASE,
)
_NAME_PART = rf"(?:{_TITLE_WORD}|[A-Z]\.)"
_BYLINE_BY_RE = re.compile(rf"\bBy\s+({_NAME_PART}(?:\s+{_NAME_PART}){{0,3}})")
_HANDLE_RE = re.compile(r"@([A-Za-z0-9_]{2,30})\b")
_DOMAIN_RE = re.compile(
    r"\b((?:[a-z0-9][a-z0-9\-]*\.)+(?:com|org|net|io|co|example|ua|uk|de|fr|info|news|tv|me))\b"
)
_WHY_RE = re.compile(
    r"\bto\s+(document|record|inform|warn|show|report|raise|draw|alert|expose|highlight)"
    r"\b([^.!?\n]*)",
    re.IGNORECASE,
)
_TOKEN_RE = re.compile(r"[\w@#:'’\-]+", re.UNICODE)
_SENTENCE_SPLIT_RE = re.compile(r"[.!?\n]+")

EARTH_RADIUS_KM = 6371.0


def normalize_ws(text: str) -> str:
    """Collapse runs of whitespace into single spaces and strip the ends."""
    return re.sub(r"\s+", " ", text).strip()


def find_dates(text: str) -> list[dt.date]:
    """Extract calendar dates in first-seen order, de-duplicated.

    Day-first numeric forms and ISO forms are both recognized; invalid
    combinations are skipped rather than guessed at.
    """
    found: dict[dt.date, None] = {}
    spans: list[tuple[int, dt.date]] = []
    for m in _DATE_DMY_RE.finditer(text):
        day, month, year = int(m.group(1)), int(m.group(2)), int(m.group(3))
        try:
            spans.append((m.start(), dt.date(year, month, day)))
        except ValueError:
            continue
    for m in _DATE_ISO_RE.finditer(text):
        year, month, day = int(m.group(1)), int(m.group(2)), int(m.group(3))
        try:
            spans.append((m.start(), dt.date(year, month, day)))
        except ValueError:
            continue
    for _, value in sorted(spans, key=lambda item: item[0]):
        found.setdefault(value, None)
    return list(found)


def find_times(text: str) -> list[dt.time]:
    """Extract clock times (HH:MM or HH:MM:SS) in first-seen order."""
    found: dict[dt.time, None] = {}
    for m in _TIME_RE.finditer(text):
        hour, minute = int(m.group(1)), int(m.group(2))
        second = int(m.group(3)) if m.group(3) else 0
        found.setdefault(dt.time(hour, minute, second), None)
    return list(found)


def find_coords(text: str) -> list[tuple[float, float]]:
    """Extract (latitude, longitude) pairs.

    Hemisphere-annotated pairs ("48.4647° N, 35.0462° E") are preferred;
    plain decimal pairs are accepted only when both numbers carry at
    least three decimals and fall inside valid coordinate ranges.
    """
    found: dict[tuple[float, float], None] = {}
    for m in _COORD_HEMI_RE.finditer(text):
        lat = float(m.group(1)) * (1.0 if m.group(2) == "N" else -1.0)
        lon = float(m.group(3)) * (1.0 if m.group(4) == "E" else -1.0)
        if abs(lat) <= 90.0 and abs(lon) <= 180.0:
            found.setdefault((lat, lon), None)
    stripped = _COORD_HEMI_RE.sub(" ", text)
    for m in _COORD_PLAIN_RE.finditer(stripped):
        lat, lon = float(m.group(1)), float(m.group(2))
        if abs(lat) <= 90.0 and abs(lon) <= 180.0:
            found.setdefault((lat, lon), None)
    return list(found)


def format_coords(lat: float, lon: float) -> str:
    """Render a coordinate pair as e.g. ``48.4647° N, 35.0462° E``."""
    ns = "N" if lat >= 0 else "S"
    ew = "E" if lon >= 0 else "W"
    return f"{abs(lat):.4f}° {ns}, {abs(lon):.4f}° {ew}"


def format_date_dmy(value: dt.date) -> str:
    """Render a date day-first as DD/MM/YYYY."""
    return f"{value.day:02d}/{value.month:02d}/{value.year:04d}"


def format_time(value: dt.time) -> str:
    """Render a time as HH:MM:SS."""
    return f"{value.hour:02d}:{value.minute:02d}:{value.second:02d}"


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two points in kilometres."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlambda = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def registered_domain(url_or_host: str) -> str:
    """Collapse a URL or hostname to its registrable domain.

    ``https://news.example.co.uk/a`` becomes ``example.co.uk``.  Uses an
    embedded list of common multi-part suffixes rather than a full
    public-suffix database.  Non-web references (for example the
    ``asset:`` pseudo scheme used for case media) are returned verbatim
    so each one counts as its own source.
    """
    value = url_or_host.strip()
    if "://" in value:
        parts = urlsplit(value)
        if parts.scheme not in ("http", "https"):
            return value
        host = parts.hostname or ""
    elif ":" in value and "." not in value.split(":", 1)[0]:
        # Scheme-like reference without "//" (e.g. "asset:ID43-2.mp4").
        return value
    else:
        host = value.split("/", 1)[0]
        host = host.split(":", 1)[0]
    host = host.strip().strip(".").lower()
    if not host:
        return value.lower()
    labels = host.split(".")
    if len(labels) <= 2 or all(part.isdigit() for part in labels):
        return host
    if ".".join(labels[-2:]) in _SECOND_LEVEL_SUFFIXES:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def _looks_like_name_noise(phrase: str) -> bool:
    first = phrase.split()[0].lower()
    return first in _MONTHS or first in _WEEKDAYS


def find_places(text: str) -> list[str]:
    """Extract place-name phrases in first-seen order.

    Three deterministic rules: a capitalized phrase containing a venue
    word ("Naberezhna Zavodska"), a capitalized phrase anchored by a
    location preposition ("in Dnipro, Ukraine"), or a settlement-of
    construction ("the city of Dnipro").
    """
    spans: list[tuple[int, str]] = []
    for m in _TITLE_PHRASE_RE.finditer(text):
        phrase = normalize_ws(m.group(0))
        words = [w.lower().strip("'’-") for w in phrase.split()]
        if any(w in VENUE_WORDS for w in words) and not _looks_like_name_noise(phrase):
            spans.append((m.start(), phrase))
    for pattern in (_PREP_PLACE_RE, _SETTLEMENT_OF_RE):
        for m in pattern.finditer(text):
            phrase = normalize_ws(m.group(1))
            if not _looks_like_name_noise(phrase):
                spans.append((m.start(), phrase))
    found: dict[str, str] = {}
    for _, phrase in sorted(spans, key=lambda item: item[0]):
        found.setdefault(phrase.casefold(), phrase)
    return list(found.values())


def find_bylines(text: str) -> list[str]:
    """Extract attribution phrases such as "filmed by local eyewitnesses"."""
    spans: list[tuple[int, str]] = []
    for m in _BYLINE_VERB_RE.finditer(text):
        spans.append((m.start(), normalize_ws(m.group(1)).rstrip(",")))
    for m in _BYLINE_BY_RE.finditer(text):
        spans.append((m.start(), normalize_ws(m.group(1)).rstrip(".,")))
    found: dict[str, str] = {}
    for _, phrase in sorted(spans, key=lambda item: item[0]):
        if phrase:
            found.setdefault(phrase.casefold(), phrase)
    return list(found.values())


def find_handles(text: str) -> list[str]:
    """Extract @handles without the leading sigil, first-seen order."""
    found: dict[str, None] = {}
    for m in _HANDLE_RE.finditer(text):
        found.setdefault(m.group(1), None)
    return list(found)


def find_domains(text: str) -> list[str]:
    """Extract bare domain mentions (lowercase labels with a known TLD)."""
    found: dict[str, None] = {}
    for m in _DOMAIN_RE.finditer(text):
        found.setdefault(m.group(1), None)
    return list(found)


def find_why(text: str) -> str | None:
    """Extract a stated purpose phrase ("to document the aftermath")."""
    m = _WHY_RE.search(text)
    if not m:
        return None
    return normalize_ws("to " + m.group(1).lower() + m.group(2))


def title_case_phrases(text: str, min_words: int = 2) -> list[str]:
    """Extract capitalized multi-word phrases (candidate proper names)."""
    found: dict[str, str] = {}
    for m in _TITLE_PHRASE_RE.finditer(text):
        phrase = normalize_ws(m.group(0))
        if len(phrase.split()) < min_words or _looks_like_name_noise(phrase):
            continue
        found.setdefault(phrase.casefold(), phrase)
    return list(found.values())


def sentences(text: str) -> list[str]:
    """Split text into trimmed, non-empty sentence fragments."""
    return [normalize_ws(part) for part in _SENTENCE_SPLIT_RE.split(text) if normalize_ws(part)]


def first_informative_sentence(text: str, max_len: int = 200) -> str | None:
    """First sentence with real content, truncated.

    Filler fragments ("Ok", "More") are skipped: a sentence qualifies
    once it has at least two words and eight word characters.
    """
    for sentence in sentences(text):
        if len(sentence.split()) >= 2 and len(re.findall(r"\w", sentence)) >= 8:
            return sentence[:max_len]
    return None


def salient_tokens(text: str, limit: int = 12) -> list[str]:
    """Query-worthy tokens: non-stopwords of length >= 3, plus ISO dates.

    Order is first appearance; de-duplication is case-insensitive with
    the first-seen casing kept.
    """
    found: dict[str, str] = {}
    for raw in _TOKEN_RE.findall(text):
        token = raw.strip("'’-.:#")
        if len(token) < 3 or token.casefold() in STOPWORDS:
            continue
        found.setdefault(token.casefold(), token)
        if len(found) >= limit:
            break
    tokens = list(found.values())
    for date in find_dates(text):
        iso = date.isoformat()
        if iso.casefold() not in found and len(tokens) < limit + 2:
            tokens.append(iso)
    return tokens
