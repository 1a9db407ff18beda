"""Deterministic multimedia verification pipeline.

Six stages: media processing, verification planning, sectioning,
iterative deep research over pluggable tools, evidence aggregation with
provenance, and report generation.  All provider traffic goes through a
record/replay gateway, so whole runs replay bit-identically offline.
"""

from .case_ingest import (
    CasePackage,
    ContextualInfo,
    EmptyBatch,
    MalformedManifest,
    MediaAsset,
    MediaKind,
    MissingMedia,
    Severity,
    UnsupportedFormat,
    load_case,
    media_mix_stats,
    validate_case,
)
from .cli import RunConfig, main, run_batch, run_case
from .errors import VeriflowError
from .evidence import (
    Evidence,
    EvidenceCategory,
    EvidenceStore,
    ScoringParams,
    Stance,
    VerdictStatus,
    confidence_score,
    derive_verdict,
    detect_conflicts,
    score_confidence,
)
from .gateway import (
    GatewayMode,
    Provider,
    ProviderGateway,
    ProviderRequest,
    ReplayCache,
    ReplayMiss,
    SearchResult,
)
from .media import ImageAnalysis, VideoAnalysis, analyze_asset, extract_keyframes
from .planner import Claim, ClaimCategory, ToolKind, VerificationPlan, build_plan
from .report import (
    MalformedReport,
    UnresolvedCitation,
    VerificationReport,
    build_report,
    from_structured,
    parse_markdown_structure,
    to_markdown,
    to_structured,
)
from .researcher import (
    GeoPoint,
    ResearchBudget,
    SourceAssessment,
    SourceContext,
    ToolRegistry,
    TrustTable,
    WhenContext,
    WhereContext,
    load_trust_table,
    make_default_registry,
    research_section,
    validate_provenance,
)
from .sectioner import Section, section_claims

__version__ = "0.1.0"

__all__ = [
    "CasePackage",
    "Claim",
    "ClaimCategory",
    "ContextualInfo",
    "EmptyBatch",
    "Evidence",
    "EvidenceCategory",
    "EvidenceStore",
    "GatewayMode",
    "GeoPoint",
    "ImageAnalysis",
    "MalformedManifest",
    "MalformedReport",
    "MediaAsset",
    "MediaKind",
    "MissingMedia",
    "Provider",
    "ProviderGateway",
    "ProviderRequest",
    "ReplayCache",
    "ReplayMiss",
    "ResearchBudget",
    "RunConfig",
    "ScoringParams",
    "SearchResult",
    "Section",
    "Severity",
    "SourceAssessment",
    "SourceContext",
    "Stance",
    "ToolKind",
    "ToolRegistry",
    "TrustTable",
    "UnresolvedCitation",
    "UnsupportedFormat",
    "VerdictStatus",
    "VerificationPlan",
    "VerificationReport",
    "VeriflowError",
    "VideoAnalysis",
    "WhenContext",
    "WhereContext",
    "analyze_asset",
    "build_plan",
    "build_report",
    "confidence_score",
    "derive_verdict",
    "detect_conflicts",
    "extract_keyframes",
    "from_structured",
    "load_case",
    "load_trust_table",
    "main",
    "make_default_registry",
    "media_mix_stats",
    "parse_markdown_structure",
    "research_section",
    "run_batch",
    "run_case",
    "score_confidence",
    "section_claims",
    "to_markdown",
    "to_structured",
    "validate_case",
    "validate_provenance",
]
