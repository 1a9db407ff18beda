"""Case package intake.

A case package is a directory of media files plus an optional
``context.yaml`` sidecar carrying captions, source posts, related
articles, and investigator clues.  Loading is filesystem-ordered and
deterministic: assets are discovered by extension scan, sorted by
filename, and identified by their filename.

Validation never raises; it returns a list of issues with stable codes
so callers can decide whether the case may proceed (any ERROR severity
means it may not).
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import yaml
from PIL import Image, UnidentifiedImageError

from .containers import probe_mp4
from .errors import VeriflowError

VIDEO_EXTENSIONS = frozenset({".mp4", ".mov"})
IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png"})

MANIFEST_NAME = "context.yaml"

# Stable validation issue codes.
CODE_NO_MEDIA = "no-media"
CODE_EMPTY_FILE = "empty-file"
CODE_ZERO_LENGTH_VIDEO = "zero-length-video"
CODE_UNREADABLE_CONTAINER = "unreadable-container"
CODE_NO_CONTEXT = "no-context"
CODE_POST_URL_INVALID = "post-url-invalid"
CODE_CASE_ID_MISMATCH = "case-id-mismatch"


class MissingMedia(VeriflowError):
    """An asset declared in the manifest is absent from the case directory."""


class MalformedManifest(VeriflowError):
    """The context.yaml sidecar cannot be parsed into the expected shape."""


class UnsupportedFormat(VeriflowError):
    """A declared asset has an extension outside the supported media sets."""


class EmptyBatch(VeriflowError):
    """A batch operation was given zero cases."""


class MediaKind(enum.Enum):
    VIDEO = "Video"
    IMAGE = "Image"


class Severity(enum.Enum):
    ERROR = "Error"
    WARNING = "Warning"


@dataclass(frozen=True)
class MediaAsset:
    """One media file in a case package, identified by filename."""

    asset_id: str
    path: Path
    kind: MediaKind
    size_bytes: int
    duration_s: float | None = None
    resolution: tuple[int, int] | None = None


@dataclass(frozen=True)
class SourcePost:
    """A social post the case media allegedly originates from."""

    platform: str
    url: str
    text: str
    posted_at: dt.datetime | None = None


@dataclass(frozen=True)
class Article:
    """A related article supplied by the investigator."""

    url: str
    title: str | None = None
    text: str | None = None


@dataclass(frozen=True)
class ContextualInfo:
    """Investigator-supplied context accompanying the media."""

    captions: tuple[str, ...] = ()
    posts: tuple[SourcePost, ...] = ()
    articles: tuple[Article, ...] = ()
    clues: tuple[str, ...] = ()

    def is_empty(self) -> bool:
        return not (self.captions or self.posts or self.articles or self.clues)


@dataclass(frozen=True)
class CasePackage:
    case_id: str
    root: Path
    assets: tuple[MediaAsset, ...]
    context: ContextualInfo
    manifest_case_id: str | None = None

    def videos(self) -> list[MediaAsset]:
        return [a for a in self.assets if a.kind is MediaKind.VIDEO]

    def images(self) -> list[MediaAsset]:
        return [a for a in self.assets if a.kind is MediaKind.IMAGE]


@dataclass(frozen=True)
class ValidationIssue:
    severity: Severity
    code: str
    message: str
    asset_id: str | None = None


@dataclass(frozen=True)
class MediaMixStats:
    """Batch-level media composition counts and fractions.

    A case counts toward ``video_fraction`` when it holds at least one
    video asset, toward ``image_fraction`` when it holds at least one
    image; mixed cases count toward both, so the fractions may sum to
    more than 1.
    """

    total: int
    with_video: int
    with_image: int
    with_both: int
    video_fraction: float
    image_fraction: float


def _require(condition: bool, where: str, expected: str) -> None:
    if not condition:
        raise MalformedManifest(f"{MANIFEST_NAME}: {where} must be {expected}")


def _parse_posted_at(value: object, where: str) -> dt.datetime | None:
    if value is None:
        return None
    if isinstance(value, dt.datetime):
        parsed = value
    elif isinstance(value, str):
        try:
            parsed = dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError as exc:
            raise MalformedManifest(f"{MANIFEST_NAME}: {where}: {exc}") from None
    else:
        raise MalformedManifest(f"{MANIFEST_NAME}: {where} must be an ISO datetime")
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed


def _parse_str_list(raw: object, where: str) -> tuple[str, ...]:
    if raw is None:
        return ()
    _require(isinstance(raw, list), where, "a list of strings")
    out: list[str] = []
    for i, item in enumerate(raw):
        _require(isinstance(item, str), f"{where}[{i}]", "a string")
        out.append(item)
    return tuple(out)


def _parse_manifest(raw: object) -> tuple[ContextualInfo, str | None, tuple[str, ...]]:
    if raw is None:
        return ContextualInfo(), None, ()
    _require(isinstance(raw, dict), "document root", "a mapping")
    assert isinstance(raw, dict)
    case_id = raw.get("case_id")
    if case_id is not None:
        _require(isinstance(case_id, str), "case_id", "a string")
    declared = _parse_str_list(raw.get("assets"), "assets")
    captions = _parse_str_list(raw.get("captions"), "captions")
    clues = _parse_str_list(raw.get("clues"), "clues")

    posts: list[SourcePost] = []
    raw_posts = raw.get("posts")
    if raw_posts is not None:
        _require(isinstance(raw_posts, list), "posts", "a list of mappings")
        for i, item in enumerate(raw_posts):
            _require(isinstance(item, dict), f"posts[{i}]", "a mapping")
            platform = item.get("platform")
            url = item.get("url")
            _require(isinstance(platform, str), f"posts[{i}].platform", "a string")
            _require(isinstance(url, str), f"posts[{i}].url", "a string")
            text = item.get("text", "")
            _require(isinstance(text, str), f"posts[{i}].text", "a string")
            posted_at = _parse_posted_at(item.get("posted_at"), f"posts[{i}].posted_at")
            posts.append(SourcePost(platform, url, text, posted_at))

    articles: list[Article] = []
    raw_articles = raw.get("articles")
    if raw_articles is not None:
        _require(isinstance(raw_articles, list), "articles", "a list of mappings")
        for i, item in enumerate(raw_articles):
            _require(isinstance(item, dict), f"articles[{i}]", "a mapping")
            url = item.get("url")
            _require(isinstance(url, str), f"articles[{i}].url", "a string")
            title = item.get("title")
            if title is not None:
                _require(isinstance(title, str), f"articles[{i}].title", "a string")
            text = item.get("text")
            if text is not None:
                _require(isinstance(text, str), f"articles[{i}].text", "a string")
            articles.append(Article(url, title, text))

    context = ContextualInfo(captions, tuple(posts), tuple(articles), clues)
    return context, case_id, declared


def _image_resolution(path: Path) -> tuple[int, int] | None:
    try:
        with Image.open(path) as img:
            return img.size
    except (UnidentifiedImageError, OSError):
        return None


def _load_asset(path: Path) -> MediaAsset:
    suffix = path.suffix.lower()
    size = path.stat().st_size
    if suffix in VIDEO_EXTENSIONS:
        duration = resolution = None
        if size > 0:
            info = probe_mp4(path)
            if info is not None:
                duration = info.duration_s
                if info.width and info.height:
                    resolution = (info.width, info.height)
        return MediaAsset(path.name, path, MediaKind.VIDEO, size, duration, resolution)
    return MediaAsset(
        path.name, path, MediaKind.IMAGE, size, None, _image_resolution(path) if size else None
    )


def load_case(case_dir: str | Path) -> CasePackage:
    """Load a case directory into a CasePackage.

    The case id is the directory name.  Media files are discovered
    non-recursively by extension and sorted by filename; other files are
    ignored.  Raises MissingMedia when the manifest declares an asset
    that is not on disk, UnsupportedFormat when it declares one with an
    extension outside the supported sets, and MalformedManifest when the
    sidecar does not parse.
    """
    root = Path(case_dir)
    if not root.is_dir():
        raise MissingMedia(f"case directory not found: {root}")

    manifest_path = root / MANIFEST_NAME
    context, manifest_case_id, declared = ContextualInfo(), None, ()
    if manifest_path.is_file():
        try:
            raw = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise MalformedManifest(f"{MANIFEST_NAME}: {exc}") from None
        context, manifest_case_id, declared = _parse_manifest(raw)

    for name in declared:
        suffix = Path(name).suffix.lower()
        if suffix not in VIDEO_EXTENSIONS | IMAGE_EXTENSIONS:
            raise UnsupportedFormat(f"declared asset {name!r} has unsupported extension")
        if not (root / name).is_file():
            raise MissingMedia(f"declared asset {name!r} not found in {root.name}")

    assets = [
        _load_asset(entry)
        for entry in sorted(root.iterdir(), key=lambda p: p.name)
        if entry.is_file()
        and entry.suffix.lower() in VIDEO_EXTENSIONS | IMAGE_EXTENSIONS
    ]
    return CasePackage(root.name, root, tuple(assets), context, manifest_case_id)


def validate_case(case: CasePackage) -> list[ValidationIssue]:
    """Check a loaded case, returning issues instead of raising.

    Issue codes are stable identifiers (see the CODE_* constants).  Any
    ERROR-severity issue means the case cannot be processed.
    """
    issues: list[ValidationIssue] = []
    if not case.assets:
        issues.append(ValidationIssue(Severity.ERROR, CODE_NO_MEDIA, "case contains no media"))
    for asset in case.assets:
        if asset.size_bytes == 0:
            issues.append(
                ValidationIssue(
                    Severity.ERROR, CODE_EMPTY_FILE, f"{asset.asset_id} is empty", asset.asset_id
                )
            )
        elif asset.kind is MediaKind.VIDEO:
            if asset.duration_s is None:
                issues.append(
                    ValidationIssue(
                        Severity.WARNING,
                        CODE_UNREADABLE_CONTAINER,
                        f"{asset.asset_id}: container metadata unreadable",
                        asset.asset_id,
                    )
                )
            elif asset.duration_s == 0:
                issues.append(
                    ValidationIssue(
                        Severity.ERROR,
                        CODE_ZERO_LENGTH_VIDEO,
                        f"{asset.asset_id} has zero duration",
                        asset.asset_id,
                    )
                )
    if case.context.is_empty():
        issues.append(
            ValidationIssue(
                Severity.WARNING, CODE_NO_CONTEXT, "case has no contextual information"
            )
        )
    for i, post in enumerate(case.context.posts):
        if not post.url.startswith(("http://", "https://")):
            issues.append(
                ValidationIssue(
                    Severity.WARNING,
                    CODE_POST_URL_INVALID,
                    f"posts[{i}].url is not an http(s) URL: {post.url}",
                )
            )
    if case.manifest_case_id is not None and case.manifest_case_id != case.case_id:
        issues.append(
            ValidationIssue(
                Severity.WARNING,
                CODE_CASE_ID_MISMATCH,
                f"manifest case_id {case.manifest_case_id!r} differs from "
                f"directory name {case.case_id!r}",
            )
        )
    return issues


def media_mix_stats(cases: Iterable[CasePackage]) -> MediaMixStats:
    """Aggregate media composition over a batch of cases."""
    total = with_video = with_image = with_both = 0
    for case in cases:
        total += 1
        has_video = any(a.kind is MediaKind.VIDEO for a in case.assets)
        has_image = any(a.kind is MediaKind.IMAGE for a in case.assets)
        with_video += has_video
        with_image += has_image
        with_both += has_video and has_image
    if total == 0:
        raise EmptyBatch("media mix statistics require at least one case")
    return MediaMixStats(
        total=total,
        with_video=with_video,
        with_image=with_image,
        with_both=with_both,
        video_fraction=with_video / total,
        image_fraction=with_image / total,
    )
