"""Operator entry point: run one case or a batch through all six stages.

Artifacts per case, under the output directory: ``plan.json``,
``evidence.json``, ``provenance.json``, ``report.md``, ``report.json``,
and keyframe images under ``report/``.  All files UTF-8 with LF line
endings, JSON sorted and indented, so cache-only runs are bit-identical
across invocations.

Exit codes are stable:

* 0 - completed with a verdict (any verdict, including Inconclusive)
* 1 - unexpected internal error
* 2 - bad command line
* 3 - case package invalid (missing media, bad manifest, empty batch)
* 4 - fixture problem in a cache-only mode (miss or corrupt entry)
* 5 - provider problem (unreachable, malformed response)
* 6 - pipeline invariant violation (plan, provenance, or report)
* 7 - batch finished but at least one case failed

Settings resolve as flags over environment (``VERIFLOW_*``) over config
file over defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .case_ingest import (
    CasePackage,
    EmptyBatch,
    MalformedManifest,
    MissingMedia,
    Severity,
    UnsupportedFormat,
    load_case,
    media_mix_stats,
    validate_case,
)
from .errors import VeriflowError
from .evidence import EvidenceStore, FinalizedStore, ScoringParams
from .gateway import (
    Adapter,
    CacheCorrupt,
    GatewayMode,
    MalformedProviderResponse,
    Provider,
    ProviderGateway,
    ProviderUnavailable,
    ReplayCache,
    ReplayMiss,
    adapters_from_env,
    canonical_json,
    clock_for_mode,
    sha256_hex,
)
from .media import ImageAnalysis, VideoAnalysis, analyze_asset
from .planner import PlanInvariantViolation, VerificationPlan, build_plan, validate_plan
from .report import (
    MalformedReport,
    UnresolvedCitation,
    VerificationReport,
    build_report,
    parse_markdown_structure,
    to_markdown,
    to_structured,
)
from .researcher import (
    ForensicFindings,
    ProvenanceInvalid,
    ProvenanceRecord,
    ResearchBudget,
    SectionResearch,
    TrustTable,
    aggregate_forensics,
    load_trust_table,
    make_default_registry,
    research_section,
    run_forensic_tool,
    validate_provenance,
)
from .sectioner import section_claims

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CASE_INVALID = 3
EXIT_FIXTURE = 4
EXIT_PROVIDER = 5
EXIT_INVARIANT = 6
EXIT_BATCH_PARTIAL = 7

PROVENANCE_SCHEMA_VERSION = 1

_ENV_PREFIX = "VERIFLOW_"


class ManifestError(VeriflowError):
    """A batch manifest is missing, unreadable, or empty."""


class CaseInvalid(VeriflowError):
    """Case validation reported blocking errors."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one invocation."""

    mode: GatewayMode = GatewayMode.REPLAY
    out_dir: Path = Path("out")
    fixtures: Path | None = None  # cache root; default <case_dir>/fixtures
    trust_table_path: Path | None = None
    budget: ResearchBudget = ResearchBudget()
    scoring: ScoringParams = ScoringParams()
    workers: int = 1  # section workers inside one case

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class CaseOutcome:
    case_id: str
    out_dir: Path
    status: str  # verdict status, or "failed (<reason>)"
    exit_code: int


@dataclass(frozen=True)
class BatchOutcome:
    outcomes: tuple[CaseOutcome, ...]
    video_fraction: float
    exit_code: int


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, value: object) -> None:
    _write_text(path, json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def _exit_code_for(error: Exception) -> int:
    if isinstance(error, (MissingMedia, MalformedManifest, UnsupportedFormat, EmptyBatch,
                          CaseInvalid, ManifestError)):
        return EXIT_CASE_INVALID
    if isinstance(error, (ReplayMiss, CacheCorrupt)):
        return EXIT_FIXTURE
    if isinstance(error, (ProviderUnavailable, MalformedProviderResponse)):
        return EXIT_PROVIDER
    if isinstance(error, (PlanInvariantViolation, ProvenanceInvalid, UnresolvedCitation,
                          MalformedReport)):
        return EXIT_INVARIANT
    if isinstance(error, VeriflowError):
        return EXIT_CASE_INVALID
    return EXIT_INTERNAL


def _build_gateway(
    case_dir: Path, config: RunConfig, adapters: Mapping[Provider, Adapter] | None
) -> ProviderGateway:
    cache_root = config.fixtures if config.fixtures is not None else case_dir / "fixtures"
    if config.mode.uses_cache_only and not cache_root.is_dir():
        raise ReplayMiss(f"fixture root not found: {cache_root}")
    if not config.mode.uses_cache_only:
        adapters = adapters if adapters is not None else adapters_from_env()
        if not adapters:
            raise ProviderUnavailable(
                "Live/Record mode needs provider endpoints; set VERIFLOW_*_ENDPOINT"
            )
    cache = ReplayCache(root=cache_root, mode=config.mode)
    return ProviderGateway(cache=cache, adapters=adapters, clock=clock_for_mode(config.mode))


def _execute_case(
    case_dir: Path,
    out_dir: Path,
    config: RunConfig,
    adapters: Mapping[Provider, Adapter] | None,
) -> tuple[CasePackage, VerificationReport]:
    case = load_case(case_dir)
    blocking = [i for i in validate_case(case) if i.severity is Severity.ERROR]
    if blocking:
        details = "; ".join(f"{i.code}: {i.message}" for i in blocking)
        raise CaseInvalid(f"case {case.case_id} failed validation: {details}")

    gateway = _build_gateway(case_dir, config, adapters)
    clock = gateway.clock
    trust = (
        load_trust_table(config.trust_table_path)
        if config.trust_table_path is not None
        else TrustTable()
    )
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    records: list[ProvenanceRecord] = []

    def pipeline_step(
        step_id: str, tool: str, input_obj: object, output_obj: object, parents: Sequence[str]
    ) -> None:
        records.append(
            ProvenanceRecord(
                step_id=step_id,
                tool=tool,
                input_digest=(
                    sha256_hex(input_obj)
                    if isinstance(input_obj, bytes)
                    else sha256_hex(canonical_json(input_obj).encode("utf-8"))
                ),
                output_digest=(
                    sha256_hex(output_obj)
                    if isinstance(output_obj, bytes)
                    else sha256_hex(canonical_json(output_obj).encode("utf-8"))
                ),
                timestamp=clock.now(),
                parents=tuple(parents),
            )
        )

    asset_ids = [a.asset_id for a in case.assets]
    pipeline_step(
        "st-case-ingest",
        "CaseIngest",
        {"case_dir": case_dir.name},
        {"case_id": case.case_id, "assets": asset_ids},
        (),
    )

    # stage 1: media processing
    analyses: list[VideoAnalysis | ImageAnalysis] = []
    media_steps: list[str] = []
    for asset in sorted(case.assets, key=lambda a: a.asset_id):
        analysis = analyze_asset(asset, gateway, report_dir)
        analyses.append(analysis)
        step_id = f"st-media-{asset.asset_id}"
        summary: dict[str, object] = {"asset_id": asset.asset_id}
        if isinstance(analysis, VideoAnalysis):
            summary["keyframes"] = [kf.slug for kf in analysis.keyframes]
            summary["descriptions"] = len(analysis.descriptions)
        else:
            summary["resolution"] = list(analysis.resolution)
        pipeline_step(step_id, "MediaProcessing", asset.path.read_bytes(), summary,
                      ("st-case-ingest",))
        media_steps.append(step_id)

    # stage 2: planning
    plan = build_plan(case, analyses, gateway)
    validate_plan(plan)
    pipeline_step(
        "st-plan",
        "Planner",
        {"case_id": case.case_id},
        plan.as_dict(),
        tuple(media_steps) if media_steps else ("st-case-ingest",),
    )

    # forensic pass over each asset, shared with the research tools
    forensics: dict[str, ForensicFindings] = {}
    analyses_by_id = {a.asset_id: a for a in analyses}
    for asset in sorted(case.assets, key=lambda a: a.asset_id):
        findings = run_forensic_tool(asset, analyses_by_id.get(asset.asset_id))
        forensics[asset.asset_id] = findings
        pipeline_step(
            f"st-forensic-{asset.asset_id}",
            "ForensicCheck",
            {"asset_id": asset.asset_id},
            findings.as_dict(),
            (f"st-media-{asset.asset_id}",),
        )
    aggregate = aggregate_forensics(
        [forensics[a.asset_id] for a in sorted(case.assets, key=lambda a: a.asset_id)]
    )

    # stage 3: sectioning
    sections = section_claims(plan)
    claims_by_id = {c.claim_id: c for c in plan.claims}

    # stage 4: per-section research, optionally in parallel
    registry = make_default_registry(case.assets, analyses, forensics)

    def research(section) -> SectionResearch:
        claims = [claims_by_id[cid] for cid in section.claim_ids]
        return research_section(
            section,
            claims,
            registry,
            gateway,
            config.budget,
            trust=trust,
            scoring=config.scoring,
            clock=clock,
            parents=("st-plan",),
        )

    if config.workers > 1 and len(sections) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(research, sections))
    else:
        results = [research(section) for section in sections]

    # stage 5: aggregate evidence
    store = EvidenceStore(config.scoring)
    for result in results:
        store.add_all(result.evidence)
        records.extend(result.records)
    finalized = store.finalize(plan.claims)

    # stage 6: report
    report = build_report(case, plan, finalized, analyses, aggregate, clock=clock)
    document = to_markdown(report)
    parse_markdown_structure(document)  # layout self-check before writing
    section_tails = [r.records[-1].step_id for r in results if r.records]
    pipeline_step(
        "st-report",
        "ReportGeneration",
        {"evidence": [ev.evidence_id for ev in finalized.items]},
        document.encode("utf-8"),
        tuple(section_tails) if section_tails else ("st-plan",),
    )
    validate_provenance(records)

    _write_json(out_dir / "plan.json", plan.as_dict())
    _write_json(out_dir / "evidence.json", finalized.as_dict())
    _write_json(
        out_dir / "provenance.json",
        {
            "provenance_schema": PROVENANCE_SCHEMA_VERSION,
            "records": [r.as_dict() for r in records],
        },
    )
    _write_text(out_dir / "report.md", document)
    _write_json(out_dir / "report.json", to_structured(report))
    return case, report


def run_case(
    case_dir: str | Path,
    config: RunConfig,
    adapters: Mapping[Provider, Adapter] | None = None,
) -> CaseOutcome:
    """Run one case end to end; never raises for per-case failures."""
    case_dir = Path(case_dir)
    out_dir = config.out_dir
    try:
        case, report = _execute_case(case_dir, out_dir, config, adapters)
    except Exception as exc:  # noqa: BLE001 - boundary, mapped to exit codes
        return CaseOutcome(
            case_id=case_dir.name,
            out_dir=out_dir,
            status=f"failed ({type(exc).__name__}: {exc})",
            exit_code=_exit_code_for(exc),
        )
    return CaseOutcome(
        case_id=case.case_id,
        out_dir=out_dir,
        status=report.verdict_status,
        exit_code=EXIT_OK,
    )


def _read_manifest(manifest_path: Path) -> list[Path]:
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    entries: list[Path] = []
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        path = Path(stripped)
        if not path.is_absolute():
            path = manifest_path.parent / path
        entries.append(path)
    if not entries:
        raise ManifestError(f"manifest lists no case directories: {manifest_path}")
    return entries


def _batch_worker_count(config: RunConfig, n_cases: int) -> int:
    workers = os.cpu_count() or 1
    if config.mode is GatewayMode.RECORD:
        workers = min(workers, 4)  # respect provider rate limits
    return max(1, min(workers, n_cases))


def run_batch(
    manifest_path: str | Path,
    config: RunConfig,
    adapters: Mapping[Provider, Adapter] | None = None,
    *,
    stream=None,
) -> BatchOutcome:
    """Run every case listed in the manifest; cases are isolated.

    Prints one status line per case plus the media-mix statistics.
    """
    out = stream if stream is not None else sys.stdout
    case_dirs = _read_manifest(Path(manifest_path))

    loaded: list[CasePackage] = []
    load_failures: dict[Path, Exception] = {}
    for case_dir in case_dirs:
        try:
            loaded.append(load_case(case_dir))
        except Exception as exc:  # noqa: BLE001 - per-case isolation
            load_failures[case_dir] = exc
    if not loaded:
        raise EmptyBatch("no case in the manifest could be loaded")
    stats = media_mix_stats(loaded)
    print(f"video_fraction={stats.video_fraction:.4f}", file=out)
    print(f"image_fraction={stats.image_fraction:.4f}", file=out)

    def run_one(case_dir: Path) -> CaseOutcome:
        if case_dir in load_failures:
            exc = load_failures[case_dir]
            return CaseOutcome(
                case_id=case_dir.name,
                out_dir=config.out_dir / case_dir.name,
                status=f"failed ({type(exc).__name__}: {exc})",
                exit_code=_exit_code_for(exc),
            )
        per_case = replace(config, out_dir=config.out_dir / case_dir.name)
        return run_case(case_dir, per_case, adapters)

    n_workers = _batch_worker_count(config, len(case_dirs))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(run_one, case_dirs))
    else:
        outcomes = [run_one(case_dir) for case_dir in case_dirs]

    ok = sum(1 for o in outcomes if o.exit_code == EXIT_OK)
    for outcome in outcomes:
        print(f"{outcome.case_id}: {outcome.status}", file=out)
    print(f"batch: {ok} ok, {len(outcomes) - ok} failed", file=out)
    exit_code = EXIT_OK if ok == len(outcomes) else EXIT_BATCH_PARTIAL
    return BatchOutcome(outcomes=tuple(outcomes), video_fraction=stats.video_fraction,
                        exit_code=exit_code)


# -- configuration resolution -------------------------------------------


def _load_config_file(path: Path) -> dict:
    if not path.is_file():
        raise ManifestError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ManifestError(f"config file must hold a mapping: {path}")
    return raw


def _pick(flag, env_name: str, file_cfg: Mapping, file_key: str, environ: Mapping[str, str]):
    """Precedence: command-line flag, then environment, then config file."""
    if flag is not None:
        return flag
    if env_name in environ:
        return environ[env_name]
    return file_cfg.get(file_key)


def resolve_config(
    args: argparse.Namespace, environ: Mapping[str, str] | None = None
) -> RunConfig:
    environ = environ if environ is not None else os.environ
    file_cfg: Mapping = {}
    config_path = _pick(args.config, _ENV_PREFIX + "CONFIG", {}, "", environ)
    if config_path:
        file_cfg = _load_config_file(Path(config_path))

    defaults = RunConfig()
    mode_raw = _pick(args.mode, _ENV_PREFIX + "MODE", file_cfg, "mode", environ)
    try:
        mode = GatewayMode(str(mode_raw).capitalize()) if mode_raw else defaults.mode
    except ValueError:
        raise ManifestError(f"unknown mode {mode_raw!r}; expected Live, Record, Replay, or Mock")

    out_raw = _pick(args.out, _ENV_PREFIX + "OUT", file_cfg, "out", environ)
    fixtures_raw = _pick(args.fixtures, _ENV_PREFIX + "FIXTURES", file_cfg, "fixtures", environ)
    trust_raw = _pick(
        args.trust_table, _ENV_PREFIX + "TRUST_TABLE", file_cfg, "trust_table", environ
    )
    iter_raw = _pick(
        args.max_iterations, _ENV_PREFIX + "MAX_ITERATIONS", file_cfg, "max_iterations", environ
    )
    workers_raw = _pick(args.workers, _ENV_PREFIX + "WORKERS", file_cfg, "workers", environ)

    budget = defaults.budget
    if iter_raw is not None:
        try:
            budget = replace(budget, max_iterations=int(iter_raw))
        except ValueError:
            raise ManifestError(f"max_iterations must be a positive integer, got {iter_raw!r}")
    try:
        workers = int(workers_raw) if workers_raw is not None else defaults.workers
    except ValueError:
        raise ManifestError(f"workers must be a positive integer, got {workers_raw!r}")

    return RunConfig(
        mode=mode,
        out_dir=Path(out_raw) if out_raw else defaults.out_dir,
        fixtures=Path(fixtures_raw) if fixtures_raw else None,
        trust_table_path=Path(trust_raw) if trust_raw else None,
        budget=budget,
        workers=workers,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veriflow",
        description="Verify a multimedia case package and write a structured report.",
    )
    target = parser.add_mutually_exclusive_group(required=True)
    target.add_argument("--case-dir", help="directory holding one case package")
    target.add_argument("--manifest", help="file listing one case directory per line")
    parser.add_argument("--mode", help="Live, Record, Replay, or Mock (default Replay)")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--trust-table", dest="trust_table",
                        help="TSV of domain reliability scores")
    parser.add_argument("--max-iterations", dest="max_iterations", type=int,
                        help="research iterations per section")
    parser.add_argument("--fixtures", help="recorded provider fixture root")
    parser.add_argument("--workers", type=int, help="section workers per case (default 1)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        if args.case_dir:
            outcome = run_case(args.case_dir, config)
            print(f"{outcome.case_id}: {outcome.status}")
            if outcome.exit_code == EXIT_OK:
                print(f"report: {outcome.out_dir / 'report.md'}")
            return outcome.exit_code
        batch = run_batch(args.manifest, config)
        return batch.exit_code
    except VeriflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
