"""End-to-end acceptance suite.

Each test covers one release criterion and prints a single
``[acceptance] criterion NN <name>: PASS|FAIL`` line so a log scan shows
the scorecard at a glance.  Tolerances are pinned here on purpose; do
not widen them to make a run green.
"""

import io
import json
import random
import time
from collections import Counter
from datetime import datetime
from pathlib import Path

import pytest
import yaml

from support import (
    make_constant_video,
    make_cut_video,
    oracle_confidence,
    oracle_conflicts,
    random_corpus,
    random_report,
    sha256_tree,
)
from veriflow.cli import RunConfig, run_batch
from veriflow.demo import run_golden
from veriflow.evidence import ScoringParams, confidence_score, detect_conflicts
from veriflow.gateway import GatewayMode
from veriflow.media import extract_keyframes
from veriflow.planner import Claim, ClaimCategory, VerificationPlan, categorize_claim, route_tools
from veriflow.report import HEADINGS, from_structured, parse_markdown_structure, to_markdown, to_structured
from veriflow.sectioner import section_claims


def check(num: int, name: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance] criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"criterion {num:02d} {name}: {detail or 'failed'}"


@pytest.fixture(scope="module")
def first_run(golden, tmp_path_factory):
    """One timed Replay run of the golden case, shared by criteria 1, 7, 9."""
    case_dir, trust_path = golden
    out_dir = tmp_path_factory.mktemp("acc-first") / "out"
    started = time.monotonic()
    outcome = run_golden(case_dir, trust_path, out_dir)
    elapsed = time.monotonic() - started
    assert outcome.exit_code == 0, outcome.status
    return outcome, elapsed


def test_criterion_01_golden_replay_report(first_run):
    outcome, elapsed = first_run
    document = (outcome.out_dir / "report.md").read_text(encoding="utf-8")
    required = (
        "Verified",
        "48.4647° N, 35.0462° E",
        "04/05/2022",
        "19:58:37",
        "https://twitter.com/cesarnews4/status/1521949838916521984",
    )
    missing = [needle for needle in required if needle not in document]
    ok = not missing and outcome.status == "Verified" and elapsed < 10.0
    check(1, "golden replay report", ok,
          f"missing={missing} status={outcome.status} elapsed={elapsed:.2f}s")


def _write_batch_case(root: Path, name: str, with_video: bool) -> None:
    case_dir = root / name
    case_dir.mkdir(parents=True)
    # media kind comes from the extension; decodability is irrelevant here
    (case_dir / "still.jpg").write_bytes(b"\xff\xd8\xff\xe0" + b"\x00" * 32)
    if with_video:
        (case_dir / "clip.mp4").write_bytes(b"\x00" * 64)
    (case_dir / "context.yaml").write_text(
        yaml.safe_dump({"captions": ["synthetic batch case"]}, sort_keys=True),
        encoding="utf-8",
    )


def test_criterion_02_batch_video_fraction(tmp_path):
    names = [f"batch-{i:02d}" for i in range(50)]
    for i, name in enumerate(names):
        _write_batch_case(tmp_path, name, with_video=i < 36)
    manifest = tmp_path / "cases.txt"
    manifest.write_text("".join(f"{name}\n" for name in names), encoding="utf-8")

    stream = io.StringIO()
    config = RunConfig(mode=GatewayMode.REPLAY, out_dir=tmp_path / "out")
    batch = run_batch(manifest, config, stream=stream)
    printed = "video_fraction=0.7200" in stream.getvalue()
    ok = printed and batch.video_fraction == 36 / 50 and len(batch.outcomes) == 50
    check(2, "batch video fraction", ok,
          f"printed={printed} fraction={batch.video_fraction!r}")


def test_criterion_03_keyframe_cut_localization(tmp_path):
    rng = random.Random(20240603)
    started = time.monotonic()
    hits = 0
    misses = []
    for i in range(20):
        pre = rng.randint(3, 12)
        post = rng.randint(3, 12)
        path = tmp_path / f"cut-{i:02d}.mp4"
        cut = make_cut_video(path, pre, post, seed=i)
        frames = extract_keyframes(path, max_frames=1)
        assert len(frames) == 1
        if abs(frames[0].frame_index - cut) <= 1:
            hits += 1
        else:
            misses.append((i, cut, frames[0].frame_index))

    flat = tmp_path / "flat.mp4"
    make_constant_video(flat, 12)
    flat_frames = extract_keyframes(flat, max_frames=1)
    flat_ok = (len(flat_frames) == 1 and flat_frames[0].frame_index == 0
               and flat_frames[0].t_s == 0.0)
    elapsed = time.monotonic() - started

    ok = hits >= 19 and flat_ok and elapsed < 60.0
    check(3, "keyframe cut localization", ok,
          f"hits={hits}/20 misses={misses} flat_ok={flat_ok} elapsed={elapsed:.1f}s")


def test_criterion_04_confidence_properties():
    rng = random.Random(20240604)
    failures = []
    for _ in range(1000):
        reliability = rng.random()
        s = rng.randint(0, 6)
        c = rng.randint(0, 6)
        params = ScoringParams(w_reliability=rng.random(), w_corroboration=rng.random())
        score = confidence_score(reliability, s, c, params)
        if not 0.0 <= score <= 1.0:
            failures.append(("bounds", reliability, s, c, params, score))
        if confidence_score(reliability, s + 1, c, params) < score - 1e-12:
            failures.append(("monotone", reliability, s, c, params))

    defaults = ScoringParams()
    for rel, s, c, want in ((0.5, 0, 0, 0.50), (0.9, 3, 0, 0.85), (0.9, 0, 3, 0.55)):
        got = confidence_score(rel, s, c, defaults)
        if abs(got - want) > 1e-9 or abs(oracle_confidence(rel, s, c) - want) > 1e-9:
            failures.append(("worked", rel, s, c, got))

    check(4, "confidence properties", not failures, f"failures={failures[:3]}")


def test_criterion_05_conflict_oracle():
    rng = random.Random(20240605)
    mismatches = 0
    for _ in range(200):
        corpus = random_corpus(rng, rng.randint(0, 20))
        got = {(p.evidence_a, p.evidence_b, p.claim_id, p.reason)
               for p in detect_conflicts(corpus)}
        if got != oracle_conflicts(corpus):
            mismatches += 1
    check(5, "conflict detection oracle", mismatches == 0, f"mismatches={mismatches}/200")


def _check_run_integrity(out_dir: Path) -> list[str]:
    """Independent walk of one run's provenance and evidence artifacts."""
    problems = []
    payload = json.loads((out_dir / "provenance.json").read_text(encoding="utf-8"))
    records = payload["records"]
    if not records:
        return ["no records"]
    ids = [r["step_id"] for r in records]
    if len(set(ids)) != len(ids):
        problems.append("duplicate step ids")
    position = {step_id: i for i, step_id in enumerate(ids)}
    for i, record in enumerate(records):
        when = datetime.fromisoformat(record["timestamp"])
        if i == 0:
            if record["parents"]:
                problems.append("first record is not a root")
            continue
        if not record["parents"]:
            problems.append(f"second root: {record['step_id']}")
        for parent in record["parents"]:
            if parent not in position:
                problems.append(f"unknown parent {parent}")
            elif position[parent] >= i:
                problems.append(f"parent {parent} does not precede {record['step_id']}")
            elif when < datetime.fromisoformat(records[position[parent]]["timestamp"]):
                problems.append(f"timestamp regression at {record['step_id']}")

    children: dict[str, list[str]] = {step_id: [] for step_id in ids}
    for record in records[1:]:
        for parent in record["parents"]:
            if parent in children:
                children[parent].append(record["step_id"])
    seen = set()
    queue = [ids[0]]
    while queue:
        node = queue.pop()
        if node in seen:
            continue
        seen.add(node)
        queue.extend(children[node])
    unreachable = [step_id for step_id in ids if step_id not in seen]
    if unreachable:
        problems.append(f"unreachable from root: {unreachable}")

    evidence = json.loads((out_dir / "evidence.json").read_text(encoding="utf-8"))
    for item in evidence["evidence"]:
        if item["step_id"] not in position:
            problems.append(f"evidence {item['evidence_id']} step missing")
    return problems


def test_criterion_06_provenance_integrity(golden_run, first_run):
    problems = []
    for out_dir in (golden_run.out_dir, first_run[0].out_dir):
        problems.extend(f"{out_dir.name}: {p}" for p in _check_run_integrity(out_dir))
    check(6, "provenance integrity", not problems, "; ".join(problems))


def test_criterion_07_replay_determinism(golden, first_run, tmp_path):
    case_dir, trust_path = golden
    second = run_golden(case_dir, trust_path, tmp_path / "out")
    assert second.exit_code == 0
    first_tree = sha256_tree(first_run[0].out_dir)
    second_tree = sha256_tree(second.out_dir)
    differing = sorted(
        set(first_tree) ^ set(second_tree)
        | {k for k in set(first_tree) & set(second_tree)
           if first_tree[k] != second_tree[k]}
    )
    check(7, "replay determinism", first_tree == second_tree, f"differs={differing}")


def test_criterion_08_report_round_trip():
    rng = random.Random(20240608)
    failures = []
    for i in range(100):
        report = random_report(rng)
        structure = parse_markdown_structure(to_markdown(report))
        if tuple(structure.headings) != HEADINGS:
            failures.append((i, "headings", structure.headings))
        if from_structured(to_structured(report)) != report:
            failures.append((i, "structured"))
    check(8, "report round trip", not failures, f"failures={failures[:3]}")


def _normalized_evidence(out_dir: Path) -> dict:
    payload = json.loads((out_dir / "evidence.json").read_text(encoding="utf-8"))
    payload["evidence"] = sorted(payload["evidence"], key=lambda item: item["evidence_id"])
    return payload


def test_criterion_09_worker_equivalence(golden, first_run, tmp_path):
    case_dir, trust_path = golden
    parallel = run_golden(case_dir, trust_path, tmp_path / "out", workers=4)
    assert parallel.exit_code == 0
    ok = _normalized_evidence(first_run[0].out_dir) == _normalized_evidence(parallel.out_dir)
    integrity = _check_run_integrity(parallel.out_dir)
    check(9, "worker count equivalence", ok and not integrity,
          f"equal={ok} integrity={integrity}")


_PLAN_TEXTS = (
    "The footage was recorded on 04/05/2022 at 19:58:37.",
    "The strike hit Dnipro near 48.4647, 35.0462.",
    "Footage was posted by @cesarnews4 on twitter.com.",
    "The clip first appeared in a report by Jane Doe.",
    "Residents reported smoke and a loud blast downtown.",
    "A convoy moved through the area that evening.",
    "Power was out across several districts overnight.",
)


def _random_plan(rng: random.Random, index: int) -> VerificationPlan:
    claims = []
    for i in range(rng.randint(1, 25)):
        text = rng.choice(_PLAN_TEXTS)
        if rng.random() < 0.8:
            category = categorize_claim(text)
        else:
            category = rng.choice(list(ClaimCategory))
        claims.append(Claim(
            claim_id=f"c{i + 1:02d}",
            text=text,
            source="caption",
            category=category,
            tools=route_tools(category),
        ))
    return VerificationPlan(case_id=f"plan-{index:03d}", claims=tuple(claims))


def test_criterion_10_sectioning_partition():
    rng = random.Random(20240610)
    failures = []
    for index in range(500):
        plan = _random_plan(rng, index)
        sections = section_claims(plan)
        got = Counter()
        for section in sections:
            got.update(section.claim_ids)
        want = Counter(claim.claim_id for claim in plan.claims)
        if got != want:
            failures.append((index, got - want, want - got))
    check(10, "sectioning partition", not failures, f"failures={failures[:3]}")
