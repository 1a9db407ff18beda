"""Minimal ISO base-media (mp4/mov) box reader.

Walks the real box tree rather than scanning for byte patterns, so
fourcc-like sequences inside media payloads cannot be misread as
structure.  Only the handful of fields the pipeline needs are decoded:
movie creation/modification time, duration, track resolution, and the
sample-description codec fourcc.

Container timestamps count seconds from 1904-01-01T00:00:00Z; a stored
value of zero means "unset" and is reported as None.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

_EPOCH_1904 = dt.datetime(1904, 1, 1, tzinfo=dt.timezone.utc)
_CONTAINER_BOXES = frozenset((b"moov", b"trak", b"mdia", b"minf", b"stbl"))


@dataclass(frozen=True)
class Mp4Info:
    """Decoded container-level facts about one mp4 file."""

    creation_utc: dt.datetime | None
    modification_utc: dt.datetime | None
    duration_s: float | None
    width: int | None
    height: int | None
    codec: str | None


def _iter_boxes(data: bytes, start: int, end: int):
    offset = start
    while offset + 8 <= end:
        size = int.from_bytes(data[offset : offset + 4], "big")
        box_type = data[offset + 4 : offset + 8]
        header = 8
        if size == 1:
            if offset + 16 > end:
                return
            size = int.from_bytes(data[offset + 8 : offset + 16], "big")
            header = 16
        elif size == 0:
            size = end - offset
        if size < header or offset + size > end:
            return
        yield box_type, offset + header, offset + size
        offset += size


def _find_boxes(data: bytes, start: int, end: int, path: tuple[bytes, ...]):
    head, rest = path[0], path[1:]
    for box_type, body_start, body_end in _iter_boxes(data, start, end):
        if box_type != head:
            continue
        if not rest:
            yield body_start, body_end
        elif box_type in _CONTAINER_BOXES:
            yield from _find_boxes(data, body_start, body_end, rest)


def _mp4_time(seconds: int) -> dt.datetime | None:
    if seconds == 0:
        return None
    return _EPOCH_1904 + dt.timedelta(seconds=seconds)


def _read_mvhd(data: bytes, start: int, end: int):
    version = data[start]
    if version == 1:
        creation = int.from_bytes(data[start + 4 : start + 12], "big")
        modification = int.from_bytes(data[start + 12 : start + 20], "big")
        timescale = int.from_bytes(data[start + 20 : start + 24], "big")
        duration = int.from_bytes(data[start + 24 : start + 32], "big")
    else:
        creation = int.from_bytes(data[start + 4 : start + 8], "big")
        modification = int.from_bytes(data[start + 8 : start + 12], "big")
        timescale = int.from_bytes(data[start + 12 : start + 16], "big")
        duration = int.from_bytes(data[start + 16 : start + 20], "big")
    duration_s = duration / timescale if timescale else None
    return _mp4_time(creation), _mp4_time(modification), duration_s


def _read_tkhd_resolution(data: bytes, start: int) -> tuple[int, int]:
    version = data[start]
    # Width and height are 16.16 fixed point at the end of the box body.
    base = start + (88 if version == 1 else 76)
    width = int.from_bytes(data[base : base + 4], "big") >> 16
    height = int.from_bytes(data[base + 4 : base + 8], "big") >> 16
    return width, height


def probe_mp4(path: str | Path) -> Mp4Info | None:
    """Decode container facts, or None when the file has no movie header."""
    data = Path(path).read_bytes()
    size = len(data)
    mvhd = next(_find_boxes(data, 0, size, (b"moov", b"mvhd")), None)
    if mvhd is None:
        return None
    creation, modification, duration_s = _read_mvhd(data, mvhd[0], mvhd[1])
    width = height = None
    for tkhd_start, _ in _find_boxes(data, 0, size, (b"moov", b"trak", b"tkhd")):
        w, h = _read_tkhd_resolution(data, tkhd_start)
        if w and h:
            width, height = w, h
            break
    codec = None
    for stsd_start, stsd_end in _find_boxes(
        data, 0, size, (b"moov", b"trak", b"mdia", b"minf", b"stbl", b"stsd")
    ):
        # Box body: version/flags (4), entry count (4), then the first
        # sample entry whose format fourcc sits after its own 4-byte size.
        fourcc_at = stsd_start + 12
        if fourcc_at + 4 <= stsd_end:
            raw = data[fourcc_at : fourcc_at + 4]
            if all(0x20 <= b < 0x7F for b in raw):
                codec = raw.decode("ascii")
                break
    return Mp4Info(creation, modification, duration_s, width, height, codec)


def write_mp4_times(
    path: str | Path,
    creation_utc: dt.datetime,
    modification_utc: dt.datetime | None = None,
) -> None:
    """Stamp movie creation/modification time into an existing mp4 file.

    Useful for authoring test media, since common encoders leave these
    fields zeroed.  Only version-0 movie headers are supported.
    """
    target = Path(path)
    data = bytearray(target.read_bytes())
    mvhd = next(_find_boxes(bytes(data), 0, len(data), (b"moov", b"mvhd")), None)
    if mvhd is None:
        raise ValueError(f"no movie header found in {target.name}")
    start = mvhd[0]
    if data[start] != 0:
        raise ValueError("only version-0 movie headers can be rewritten")
    if modification_utc is None:
        modification_utc = creation_utc
    creation = int((creation_utc - _EPOCH_1904).total_seconds())
    modification = int((modification_utc - _EPOCH_1904).total_seconds())
    data[start + 4 : start + 8] = creation.to_bytes(4, "big")
    data[start + 8 : start + 12] = modification.to_bytes(4, "big")
    target.write_bytes(bytes(data))
