"""Stage 1: per-asset media processing.

Videos get decoded, scored for visual change, and reduced to a small set
of key frames; the multimodal provider contributes a frame-by-frame
narrative with any on-screen overlay text.  Images get EXIF fields and a
reverse image search pass.

Key-frame scoring: each frame (after the first) is scored by the mean
absolute difference of consecutive grayscale frames downscaled to
``downscale_px`` squared, normalized into [0, 1].  Frames are ranked by
score, ties broken toward the earlier timestamp, and selected greedily
while suppressing any frame closer than ``min_gap_s`` seconds to an
already-selected one.  A video with no visual change at all yields a
single key frame at t=0.
"""

from __future__ import annotations

import datetime as dt
import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .case_ingest import MediaAsset, MediaKind
from .containers import probe_mp4
from .errors import VeriflowError

if TYPE_CHECKING:
    from .gateway import ProviderGateway, SearchResult

DEFAULT_MAX_FRAMES = 8
DEFAULT_MIN_GAP_S = 1.0
DEFAULT_DOWNSCALE_PX = 64
JPEG_QUALITY = 90
_FALLBACK_FPS = 30.0

DEFAULT_VIDEO_INSTRUCTION = (
    "Describe the video frame by frame; identify key objects, scenes, and any "
    "text overlays with their timing."
)

_SLUG_RE = re.compile(r"^(?P<asset_id>.+)_(?P<mm>\d{2})_(?P<ss>\d{2})_(?P<t>\d+\.\d{2})s$")

_EXIF_DATETIME_ORIGINAL = 0x9003
_EXIF_DATETIME = 0x0132
_EXIF_IFD = 0x8769
_GPS_IFD = 0x8825


class DecodeFailure(VeriflowError):
    """A media file could not be decoded at all."""


class ZeroLengthVideo(VeriflowError):
    """A video decoded to zero frames."""


class EmptyImage(VeriflowError):
    """An image file is empty or has zero area."""


class OverlayKind(enum.Enum):
    TIMESTAMP = "Timestamp"
    LOCATION = "Location"
    CAPTION = "Caption"
    OTHER = "Other"


@dataclass(frozen=True)
class OverlayText:
    """One piece of on-screen text read from a video frame."""

    text: str
    kind: OverlayKind
    t_s: float


@dataclass(frozen=True)
class FrameDescription:
    """Provider narrative for one span of a video."""

    t_start_s: float
    t_end_s: float
    text: str
    overlays: tuple[OverlayText, ...] = ()


@dataclass(frozen=True)
class KeyFrame:
    asset_id: str
    frame_index: int
    t_s: float
    score: float
    slug: str
    image_path: Path | None = None


@dataclass(frozen=True)
class VideoAnalysis:
    asset_id: str
    duration_s: float
    fps: float
    frame_count: int
    resolution: tuple[int, int] | None
    codec: str | None
    container_created_utc: dt.datetime | None
    container_modified_utc: dt.datetime | None
    keyframes: tuple[KeyFrame, ...]
    descriptions: tuple[FrameDescription, ...]

    def all_overlays(self) -> list[OverlayText]:
        return [ov for desc in self.descriptions for ov in desc.overlays]


@dataclass(frozen=True)
class ImageAnalysis:
    asset_id: str
    resolution: tuple[int, int]
    exif_datetime: dt.datetime | None
    camera: str | None
    gps: tuple[float, float] | None
    matches: tuple["SearchResult", ...]


def keyframe_slug(asset_id: str, t_s: float) -> str:
    """Name a key frame: ``<asset_id>_<MM>_<SS>_<t.2f>s``.

    The minute/second fields are the integer position within the video;
    the trailing field is the exact timestamp to two decimals, so the
    slug parses back to the timestamp it was built from.
    """
    total = int(t_s)
    return f"{asset_id}_{total // 60:02d}_{total % 60:02d}_{t_s:.2f}s"


def parse_keyframe_slug(slug: str) -> tuple[str, float]:
    """Invert keyframe_slug, returning (asset_id, t_s).

    Raises ValueError for names not produced by keyframe_slug.
    """
    m = _SLUG_RE.match(slug)
    if not m:
        raise ValueError(f"not a key-frame slug: {slug!r}")
    t_s = float(m.group("t"))
    total = int(t_s)
    if int(m.group("mm")) != total // 60 or int(m.group("ss")) != total % 60:
        raise ValueError(f"inconsistent minute/second fields in slug: {slug!r}")
    return m.group("asset_id"), t_s


def _downscaled_grays(path: Path, downscale_px: int) -> tuple[list[np.ndarray], float]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeFailure(f"cannot open video: {path.name}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
    grays: list[np.ndarray] = []
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
            grays.append(
                cv2.resize(gray, (downscale_px, downscale_px), interpolation=cv2.INTER_AREA)
            )
    finally:
        cap.release()
    if not grays:
        raise ZeroLengthVideo(f"video decoded to zero frames: {path.name}")
    if fps <= 0:
        fps = _FALLBACK_FPS
    return grays, fps


def _change_scores(grays: list[np.ndarray]) -> list[float]:
    # scores[i] describes frame i against frame i-1; frame 0 has no score.
    scores = [0.0]
    for prev, cur in zip(grays, grays[1:]):
        diff = cv2.absdiff(cur, prev)
        scores.append(float(np.mean(diff)) / 255.0)
    return scores


def _select_indices(
    scores: list[float], fps: float, max_frames: int, min_gap_s: float
) -> list[int]:
    ranked = sorted(range(1, len(scores)), key=lambda i: (-scores[i], i))
    selected: list[int] = []
    for index in ranked:
        if scores[index] <= 0.0:
            break
        if len(selected) >= max_frames:
            break
        if all(abs(index - other) / fps >= min_gap_s for other in selected):
            selected.append(index)
    if not selected:
        return [0]
    return sorted(selected)


def _write_frames(
    path: Path, wanted: list[int], asset_id: str, fps: float, out_dir: Path
) -> dict[int, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    remaining = set(wanted)
    written: dict[int, Path] = {}
    cap = cv2.VideoCapture(str(path))
    try:
        index = 0
        while remaining:
            ok, frame = cap.read()
            if not ok:
                break
            if index in remaining:
                target = out_dir / f"{keyframe_slug(asset_id, index / fps)}.jpg"
                if not cv2.imwrite(str(target), frame, [cv2.IMWRITE_JPEG_QUALITY, JPEG_QUALITY]):
                    raise DecodeFailure(f"failed to encode key frame {target.name}")
                written[index] = target
                remaining.discard(index)
            index += 1
    finally:
        cap.release()
    return written


def extract_keyframes(
    video_path: str | Path,
    asset_id: str | None = None,
    out_dir: str | Path | None = None,
    *,
    max_frames: int = DEFAULT_MAX_FRAMES,
    min_gap_s: float = DEFAULT_MIN_GAP_S,
    downscale_px: int = DEFAULT_DOWNSCALE_PX,
) -> list[KeyFrame]:
    """Select the most visually significant frames of a video.

    Returns key frames in timestamp order.  When ``out_dir`` is given,
    each selected frame is also written there as ``<slug>.jpg`` at
    quality 90 and the KeyFrame carries the written path.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be at least 1")
    path = Path(video_path)
    name = asset_id if asset_id is not None else path.name
    grays, fps = _downscaled_grays(path, downscale_px)
    scores = _change_scores(grays)
    indices = _select_indices(scores, fps, max_frames, min_gap_s)
    written: dict[int, Path] = {}
    if out_dir is not None:
        written = _write_frames(path, indices, name, fps, Path(out_dir))
    return [
        KeyFrame(
            asset_id=name,
            frame_index=i,
            t_s=i / fps,
            score=scores[i],
            slug=keyframe_slug(name, i / fps),
            image_path=written.get(i),
        )
        for i in indices
    ]


def analyze_video(
    asset: MediaAsset,
    gateway: "ProviderGateway",
    report_dir: str | Path | None = None,
    *,
    max_frames: int = DEFAULT_MAX_FRAMES,
    min_gap_s: float = DEFAULT_MIN_GAP_S,
    downscale_px: int = DEFAULT_DOWNSCALE_PX,
) -> VideoAnalysis:
    """Full Stage 1 pass over one video asset."""
    keyframes = extract_keyframes(
        asset.path,
        asset.asset_id,
        report_dir,
        max_frames=max_frames,
        min_gap_s=min_gap_s,
        downscale_px=downscale_px,
    )
    cap = cv2.VideoCapture(str(asset.path))
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or _FALLBACK_FPS
        frame_count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    finally:
        cap.release()
    info = probe_mp4(asset.path)
    resolution = (width, height) if width and height else None
    duration = frame_count / fps if fps else 0.0
    if info is not None:
        if info.width and info.height:
            resolution = (info.width, info.height)
        if info.duration_s:
            duration = info.duration_s
    descriptions = gateway.describe_video(asset.path, DEFAULT_VIDEO_INSTRUCTION)
    return VideoAnalysis(
        asset_id=asset.asset_id,
        duration_s=duration,
        fps=fps,
        frame_count=frame_count,
        resolution=resolution,
        codec=info.codec if info else None,
        container_created_utc=info.creation_utc if info else None,
        container_modified_utc=info.modification_utc if info else None,
        keyframes=tuple(keyframes),
        descriptions=tuple(descriptions),
    )


def _exif_datetime(exif: Image.Exif) -> dt.datetime | None:
    raw = exif.get_ifd(_EXIF_IFD).get(_EXIF_DATETIME_ORIGINAL) or exif.get(_EXIF_DATETIME)
    if not isinstance(raw, str):
        return None
    try:
        return dt.datetime.strptime(raw, "%Y:%m:%d %H:%M:%S")
    except ValueError:
        return None


def _exif_gps(exif: Image.Exif) -> tuple[float, float] | None:
    gps = exif.get_ifd(_GPS_IFD)
    lat_ref, lat = gps.get(1), gps.get(2)
    lon_ref, lon = gps.get(3), gps.get(4)
    if not (lat_ref and lat and lon_ref and lon):
        return None
    try:
        lat_deg = float(lat[0]) + float(lat[1]) / 60.0 + float(lat[2]) / 3600.0
        lon_deg = float(lon[0]) + float(lon[1]) / 60.0 + float(lon[2]) / 3600.0
    except (TypeError, IndexError, ZeroDivisionError):
        return None
    if lat_ref == "S":
        lat_deg = -lat_deg
    if lon_ref == "W":
        lon_deg = -lon_deg
    return (lat_deg, lon_deg)


def analyze_image(asset: MediaAsset, gateway: "ProviderGateway") -> ImageAnalysis:
    """Full Stage 1 pass over one image asset: EXIF plus reverse search."""
    if asset.size_bytes == 0:
        raise EmptyImage(f"image file is empty: {asset.asset_id}")
    try:
        with Image.open(asset.path) as img:
            resolution = img.size
            exif = img.getexif()
    except (UnidentifiedImageError, OSError):
        raise DecodeFailure(f"cannot decode image: {asset.asset_id}") from None
    if resolution[0] == 0 or resolution[1] == 0:
        raise EmptyImage(f"image has zero area: {asset.asset_id}")
    make = exif.get(0x010F)
    model = exif.get(0x0110)
    camera = " ".join(str(part).strip() for part in (make, model) if part) or None
    matches = gateway.reverse_image_search(asset.path.read_bytes())
    return ImageAnalysis(
        asset_id=asset.asset_id,
        resolution=resolution,
        exif_datetime=_exif_datetime(exif),
        camera=camera,
        gps=_exif_gps(exif),
        matches=tuple(matches),
    )


def analyze_asset(
    asset: MediaAsset,
    gateway: "ProviderGateway",
    report_dir: str | Path | None = None,
    *,
    max_frames: int = DEFAULT_MAX_FRAMES,
    min_gap_s: float = DEFAULT_MIN_GAP_S,
    downscale_px: int = DEFAULT_DOWNSCALE_PX,
) -> VideoAnalysis | ImageAnalysis:
    """Dispatch Stage 1 processing on asset kind."""
    if asset.kind is MediaKind.VIDEO:
        return analyze_video(
            asset,
            gateway,
            report_dir,
            max_frames=max_frames,
            min_gap_s=min_gap_s,
            downscale_px=downscale_px,
        )
    return analyze_image(asset, gateway)
