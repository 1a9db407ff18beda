"""Self-contained demonstration case with recorded provider fixtures.

Builds a small verification case (three synthesized videos of a strike
aftermath, a social post, captions), records provider fixtures from an
in-process scripted provider, then replays the whole pipeline offline:

    python -m veriflow.demo --root ./golden-demo

The scripted provider answers every operation with fixed content, so
the recorded fixture set replays to a stable "Verified" outcome.  The
test suite builds the same case once per session and runs the
acceptance checks against it.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

import cv2
import numpy as np
import yaml

from .cli import EXIT_OK, CaseOutcome, RunConfig, run_case
from .containers import write_mp4_times
from .gateway import (
    OP_DESCRIBE_VIDEO,
    OP_EXTRACT_CLAIMS,
    OP_EXTRACT_SOURCE_DETAILS,
    OP_FETCH_PAGE,
    OP_LOOKUP,
    OP_SEARCH,
    GatewayMode,
    Provider,
    canonical_json,
    sha256_hex,
)

GOLDEN_CASE_ID = "ID43"
POST_URL = "https://twitter.com/cesarnews4/status/1521949838916521984"
EVENT_CREATED_UTC = dt.datetime(2022, 5, 4, 19, 58, 37, tzinfo=dt.timezone.utc)

_HERALD_URL = "https://herald.example/news/dnipro-strike-2022"
_WIRE_URL = "https://wire.example/2022/05/ukraine-dnipro"
_ARCHIVE_URL = "https://archive.example/footage/dnipro-0405"
_FACTCHECK_URL = "https://factcheck.example/claims/dnipro-strike"

_POST_TEXT = (
    "Missile strike aftermath in Dnipro, filmed 04/05/2022 at 19:58:37. "
    "Rescue workers are at the scene. Coordinates 48.4647, 35.0462."
)

_CLAIMS = [
    {
        "text": "The footage was recorded on 04/05/2022 at 19:58:37.",
        "source": "post",
        "suggested_tools": [],
    },
    {
        "text": "The strike hit the city of Dnipro near 48.4647, 35.0462.",
        "source": "post",
        "suggested_tools": ["MetadataAnalysis"],
    },
    {
        "text": "The video was first shared by @cesarnews4.",
        "source": "post",
        "suggested_tools": [],
    },
    {
        "text": "Rescue workers responded to the aftermath of a missile strike.",
        "source": "caption",
        "suggested_tools": [],
    },
]

_SEARCH_RESULTS = [
    {
        "url": _HERALD_URL,
        "title": "Missile strike hits Dnipro on 04/05/2022",
        "snippet": (
            "Rescue workers responded to the missile strike aftermath in Dnipro "
            "on 04/05/2022 at 19:58:37."
        ),
        "publisher": "Dnipro Herald",
        "published_at": "2022-05-05T08:00:00Z",
    },
    {
        "url": _WIRE_URL,
        "title": "Verified: Dnipro strike footage shared by @cesarnews4",
        "snippet": (
            "Footage first shared by @cesarnews4 shows the aftermath in Dnipro "
            "on 04/05/2022. Coordinates 48.4647, 35.0462."
        ),
        "publisher": "Ukraine Wire",
        "published_at": "2022-05-05T10:30:00Z",
    },
    {
        "url": POST_URL,
        "title": "Twitter post by @cesarnews4",
        "snippet": (
            "Missile strike aftermath in Dnipro, filmed 04/05/2022 at 19:58 local time."
        ),
        "publisher": "Twitter",
        "published_at": "2022-05-04T20:15:00Z",
    },
]

_ARCHIVE_RESULT = {
    "url": _ARCHIVE_URL,
    "title": "Archived footage: strike in Dnipro, 04/05/2022",
    "snippet": (
        "Archived copy of the Dnipro strike footage recorded on 04/05/2022 "
        "near 48.4647, 35.0462."
    ),
    "publisher": "Footage Archive",
    "published_at": "2022-05-06T12:00:00Z",
}

_PAGES = {
    _HERALD_URL: (
        "A missile strike hit a residential district of Dnipro on 04/05/2022. "
        "Rescue workers responded to the aftermath within minutes and reached the "
        "scene at 19:58:37 local time. The blast site lies near 48.4647, 35.0462 "
        "in the east of the city. By Olena Marchenko. Reporters gathered witness "
        "statements in order to document the timeline of the strike."
    ),
    _WIRE_URL: (
        "Footage of the strike in Dnipro was first shared by @cesarnews4 on "
        "04/05/2022 and spread widely within hours. The clip shows rescue workers "
        "at the aftermath near 48.4647, 35.0462. By Andriy Kovalenko. The account "
        "posted the video in order to alert residents nearby."
    ),
    POST_URL: _POST_TEXT,
}

_SOURCE_FIELDS = {
    _HERALD_URL: {
        "source_detail": "Local news report on the missile strike in Dnipro.",
        "where": "in Dnipro, 48.4647, 35.0462",
        "when": "04/05/2022 19:58:37",
        "who": "Olena Marchenko",
        "why": "to document the timeline of the strike",
    }
}

_FACT_CHECK_ENTRIES = [
    {
        "verdict": "True",
        "url": _FACTCHECK_URL,
        "publisher": "FactCheck Example",
        "published_at": "2022-05-06T09:00:00Z",
    }
]

_TRUST_ROWS = [
    ("herald.example", 0.9),
    ("wire.example", 0.85),
    ("twitter.com", 0.6),
    ("archive.example", 0.8),
    ("factcheck.example", 0.95),
    ("asset:id43-1.mp4", 0.9),
    ("asset:id43-2.mp4", 0.9),
    ("asset:id43-3.mp4", 0.9),
]

_VIDEO_SPECS = [
    ("ID43-1.mp4", 50, 25),  # (name, frames, cut frame)
    ("ID43-2.mp4", 40, 20),
    ("ID43-3.mp4", 45, None),
]
_VIDEO_FPS = 10.0
_VIDEO_SIZE = (320, 180)


def _j(value: object) -> bytes:
    return canonical_json(value).encode("utf-8")


def _render_frame(width: int, height: int, index: int, phase: int) -> np.ndarray:
    """Deterministic synthetic frame: gradient sky, moving block, palette
    change per scene phase.  Pure function of its arguments."""
    frame = np.zeros((height, width, 3), dtype=np.uint8)
    ramp = np.linspace(40, 200, width, dtype=np.uint8)
    frame[:, :, (phase % 3)] = ramp[np.newaxis, :]
    frame[:, :, ((phase + 1) % 3)] = 60 + 20 * phase
    x = (12 + 7 * index) % max(1, width - 48)
    y = (20 + 3 * index) % max(1, height - 40)
    frame[y : y + 36, x : x + 44] = (200 - 30 * phase, 80 + 40 * phase, 50 + 60 * phase)
    return frame


def _write_video(path: Path, frames: int, cut_at: int | None) -> None:
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"mp4v"), _VIDEO_FPS, _VIDEO_SIZE
    )
    if not writer.isOpened():
        raise RuntimeError(f"cv2 cannot open {path} for writing")
    width, height = _VIDEO_SIZE
    try:
        for i in range(frames):
            phase = 1 if cut_at is not None and i >= cut_at else 0
            writer.write(_render_frame(width, height, i, phase))
    finally:
        writer.release()
    write_mp4_times(path, EVENT_CREATED_UTC)


def _descriptions_payload(asset_name: str) -> dict:
    timestamp_overlay = {
        "text": "04/05/2022 19:58:37",
        "kind": "Timestamp",
        "t_s": 0.5,
    }
    location_overlay = {"text": "Dnipro", "kind": "Location", "t_s": 1.0}
    if asset_name == "ID43-1.mp4":
        descriptions = [
            {
                "t_start_s": 0.0,
                "t_end_s": 2.5,
                "text": (
                    "Rescue workers move through debris after a missile strike "
                    "in Dnipro."
                ),
                "overlays": [timestamp_overlay, location_overlay],
            },
            {
                "t_start_s": 2.5,
                "t_end_s": 5.0,
                "text": "Smoke rises from a damaged residential building.",
                "overlays": [],
            },
        ]
    elif asset_name == "ID43-2.mp4":
        descriptions = [
            {
                "t_start_s": 0.0,
                "t_end_s": 4.0,
                "text": "Emergency vehicles arrive at the strike site in Dnipro.",
                "overlays": [timestamp_overlay],
            }
        ]
    else:
        descriptions = [
            {
                "t_start_s": 0.0,
                "t_end_s": 4.5,
                "text": "Bystanders film the aftermath of the strike.",
                "overlays": [{"text": "Dnipro strike aftermath", "kind": "Caption", "t_s": 0.8}],
            }
        ]
    return {"descriptions": descriptions}


class ScriptedAdapter:
    """Adapter facade over the scripted provider, one per provider kind."""

    def __init__(self, provider: Provider, service: "GoldenProvider") -> None:
        self.provider = provider
        self.service = service

    def call(self, operation: str, payload: bytes) -> bytes:
        return self.service.respond(self.provider, operation, payload)


class GoldenProvider:
    """Fixed answers for every provider operation the golden case makes."""

    def __init__(self, descriptions_by_hash: dict[str, dict]) -> None:
        self.descriptions_by_hash = descriptions_by_hash

    def adapters(self) -> dict[Provider, ScriptedAdapter]:
        return {provider: ScriptedAdapter(provider, self) for provider in Provider}

    def respond(self, provider: Provider, operation: str, payload: bytes) -> bytes:
        if provider is Provider.MULTIMODAL_MODEL:
            if operation == OP_DESCRIBE_VIDEO:
                request = json.loads(payload.decode("utf-8"))
                return _j(self.descriptions_by_hash[request["video_sha256"]])
            if operation == OP_EXTRACT_CLAIMS:
                return _j({"claims": _CLAIMS})
            if operation == OP_EXTRACT_SOURCE_DETAILS:
                request = json.loads(payload.decode("utf-8"))
                return _j(_SOURCE_FIELDS.get(request["url"], {}))
        if provider is Provider.WEB_SEARCH:
            if operation == OP_SEARCH:
                return _j({"results": _SEARCH_RESULTS})
            if operation == OP_FETCH_PAGE:
                request = json.loads(payload.decode("utf-8"))
                return _PAGES.get(request["url"], "").encode("utf-8")
        if provider is Provider.REVERSE_IMAGE_SEARCH and operation == OP_SEARCH:
            return _j({"results": [_ARCHIVE_RESULT]})
        if provider is Provider.FACT_CHECK_DB and operation == OP_LOOKUP:
            request = json.loads(payload.decode("utf-8"))
            entries = _FACT_CHECK_ENTRIES if "rescue" in request["claim"].lower() else []
            return _j({"entries": entries})
        raise AssertionError(f"unexpected call: {provider.value}/{operation}")


def build_golden_case(root: Path) -> Path:
    """Write the case directory: three videos plus the context sidecar."""
    case_dir = root / GOLDEN_CASE_ID
    case_dir.mkdir(parents=True, exist_ok=True)
    for name, frames, cut_at in _VIDEO_SPECS:
        _write_video(case_dir / name, frames, cut_at)
    manifest = {
        "case_id": GOLDEN_CASE_ID,
        "assets": [name for name, _, _ in _VIDEO_SPECS],
        "posts": [
            {
                "platform": "twitter",
                "url": POST_URL,
                "text": _POST_TEXT,
                "posted_at": "2022-05-04T20:15:00Z",
            }
        ],
        "captions": [
            "Aftermath of the missile strike in Dnipro, 04/05/2022, 19:58:37 local time."
        ],
        "clues": ["Check whether the on-screen timestamp matches the claimed date."],
    }
    (case_dir / "context.yaml").write_text(
        yaml.safe_dump(manifest, sort_keys=False, allow_unicode=True), encoding="utf-8"
    )
    return case_dir


def write_trust_table(path: Path) -> Path:
    lines = ["# domain\treliability"]
    lines += [f"{domain}\t{score}" for domain, score in _TRUST_ROWS]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def record_fixtures(case_dir: Path, trust_path: Path, record_out: Path) -> Path:
    """Run the pipeline once in Record mode against the scripted provider,
    filling <case_dir>/fixtures for later Replay runs."""
    descriptions = {
        sha256_hex((case_dir / name).read_bytes()): _descriptions_payload(name)
        for name, _, _ in _VIDEO_SPECS
    }
    provider = GoldenProvider(descriptions)
    config = RunConfig(
        mode=GatewayMode.RECORD,
        out_dir=record_out,
        trust_table_path=trust_path,
        workers=1,
    )
    outcome = run_case(case_dir, config, adapters=provider.adapters())
    if outcome.exit_code != EXIT_OK:
        raise RuntimeError(f"fixture recording failed: {outcome.status}")
    return case_dir / "fixtures"


def build_demo(root: Path) -> tuple[Path, Path]:
    """Create case, trust table, and fixtures under ``root``.

    Returns (case_dir, trust_table_path); after this, Replay runs work
    with no adapters at all.
    """
    root.mkdir(parents=True, exist_ok=True)
    case_dir = build_golden_case(root)
    trust_path = write_trust_table(root / "trust.tsv")
    record_fixtures(case_dir, trust_path, root / "record-out")
    return case_dir, trust_path


def run_golden(
    case_dir: Path, trust_path: Path, out_dir: Path, workers: int = 1
) -> CaseOutcome:
    """Replay the golden case into ``out_dir``."""
    config = RunConfig(
        mode=GatewayMode.REPLAY,
        out_dir=out_dir,
        trust_table_path=trust_path,
        workers=workers,
    )
    return run_case(case_dir, config)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m veriflow.demo",
        description="Build the demonstration case and replay it offline.",
    )
    parser.add_argument("--root", default="golden-demo", help="working directory")
    parser.add_argument("--workers", type=int, default=1, help="section workers")
    args = parser.parse_args(argv)

    root = Path(args.root)
    case_dir, trust_path = build_demo(root)
    outcome = run_golden(case_dir, trust_path, root / "out", workers=args.workers)
    print(f"case {outcome.case_id}: {outcome.status}")
    print(f"artifacts: {outcome.out_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
