"""Research loop, stance rules, trust, forensics, and provenance."""

import datetime as dt
from pathlib import Path

import pytest

from veriflow import (
    Claim,
    ClaimCategory,
    GatewayMode,
    MediaAsset,
    MediaKind,
    ProviderGateway,
    ReplayCache,
    ResearchBudget,
    Section,
    Stance,
    ToolKind,
    ToolRegistry,
    TrustTable,
    load_trust_table,
    research_section,
    validate_provenance,
)
from veriflow.planner import route_tools
from veriflow.researcher import (
    Authenticity,
    GeoPoint,
    ProvenanceInvalid,
    ProvenanceRecord,
    SourceContext,
    TrustTableError,
    UnextractableSource,
    WhenContext,
    WhereContext,
    aggregate_forensics,
    analyze_source,
    build_claim_cues,
    extract_source_context,
    generate_queries,
    infer_stance,
    run_forensic_tool,
    run_metadata_tool,
)
from veriflow.media import ImageAnalysis, VideoAnalysis

from support import make_constant_video, make_cut_video, make_result

UTC = dt.timezone.utc
DIGEST = "0" * 64


# ---------------------------------------------------------------------------
# value objects

def test_geo_point_validation():
    GeoPoint(48.4647, 35.0462)
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 181.0)


def test_geo_point_formatting():
    assert GeoPoint(48.4647, 35.0462).formatted() == "48.4647° N, 35.0462° E"


def test_source_context_requires_a_field():
    with pytest.raises(UnextractableSource):
        SourceContext()
    SourceContext(who="@someone")  # one field is enough


def test_budget_defaults_and_validation():
    budget = ResearchBudget()
    assert (budget.max_iterations, budget.max_tool_calls) == (3, 24)
    assert budget.min_independent_sources == 2
    with pytest.raises(ValueError):
        ResearchBudget(max_iterations=0)


def test_provenance_record_digest_validation():
    with pytest.raises(ValueError):
        ProvenanceRecord(
            step_id="st-x-001",
            tool="t",
            input_digest="nothex",
            output_digest=DIGEST,
            timestamp=dt.datetime(2024, 1, 1, tzinfo=UTC),
            parents=(),
        )


# ---------------------------------------------------------------------------
# trust table

def test_load_trust_table(tmp_path):
    path = tmp_path / "trust.tsv"
    path.write_text(
        "# comment\nHerald.example\t0.9\n\nwire.example\t0.85\n", encoding="utf-8"
    )
    trust = load_trust_table(path)
    assert trust.lookup("herald.example") == 0.9  # keys lowercased
    assert trust.lookup("wire.example") == 0.85
    assert trust.lookup("unknown.example") == 0.5  # default
    assert "herald.example" in trust and "unknown.example" not in trust


@pytest.mark.parametrize(
    "line", ["no-tabs-here", "a.example\tNaN-ish\tthird", "a.example\t1.5"]
)
def test_trust_table_rejects_bad_rows(tmp_path, line):
    path = tmp_path / "trust.tsv"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(TrustTableError):
        load_trust_table(path)


def test_analyze_source_notes_and_default():
    trust = TrustTable({"herald.example": 0.9})
    known = analyze_source(make_result("https://herald.example/a"), None, trust)
    assert known.reliability == 0.9
    unknown = analyze_source(make_result("https://other.example/a"), None, trust)
    assert unknown.reliability == 0.5
    assert any("not in trust table" in note for note in unknown.notes)


# ---------------------------------------------------------------------------
# stance inference

def ctx(date=None, time=None, geo=None, place=None, who=None):
    when = WhenContext(date=date, time=time) if date else None
    where = None
    if geo or place:
        where = WhereContext(
            place_name=place or "", geo=GeoPoint(*geo) if geo else None
        )
    return SourceContext(where=where, when=when, who=who)


class TestInferStance:
    def test_temporal_date_match(self):
        cc = build_claim_cues("The footage was recorded on 04/05/2022.")
        got = infer_stance(cc, ClaimCategory.TEMPORAL, ctx(date=dt.date(2022, 5, 4)), "")
        assert got is Stance.SUPPORTS

    def test_temporal_date_mismatch(self):
        cc = build_claim_cues("The footage was recorded on 04/05/2022.")
        got = infer_stance(cc, ClaimCategory.TEMPORAL, ctx(date=dt.date(2022, 5, 7)), "")
        assert got is Stance.CONTRADICTS

    def test_temporal_date_in_text_only(self):
        cc = build_claim_cues("The footage was recorded on 04/05/2022.")
        got = infer_stance(cc, ClaimCategory.TEMPORAL, None, "published 04/05/2022")
        assert got is Stance.SUPPORTS

    def test_temporal_no_signal(self):
        cc = build_claim_cues("The footage was recorded on 04/05/2022.")
        assert infer_stance(cc, ClaimCategory.TEMPORAL, None, "no dates") is Stance.RELATED

    def test_geographic_within_50km(self):
        cc = build_claim_cues("The strike hit near 48.4647, 35.0462.")
        near = ctx(geo=(48.52, 35.10), place="Dnipro")
        assert infer_stance(cc, ClaimCategory.GEOGRAPHIC, near, "") is Stance.SUPPORTS

    def test_geographic_beyond_50km(self):
        cc = build_claim_cues("The strike hit near 48.4647, 35.0462.")
        far = ctx(geo=(50.4501, 30.5234), place="Kyiv")
        assert infer_stance(cc, ClaimCategory.GEOGRAPHIC, far, "") is Stance.CONTRADICTS

    def test_geographic_place_name_overlap(self):
        cc = build_claim_cues("The video shows the city of Dnipro.")
        got = infer_stance(cc, ClaimCategory.GEOGRAPHIC, None, "strike on Dnipro today")
        assert got is Stance.SUPPORTS

    def test_entity_substring(self):
        cc = build_claim_cues("First shared by @cesarnews4.")
        got = infer_stance(cc, ClaimCategory.ENTITY, None, "posted by @cesarnews4 at 8pm")
        assert got is Stance.SUPPORTS
        assert infer_stance(cc, ClaimCategory.ENTITY, None, "someone else") is Stance.RELATED

    def test_contextual_token_overlap(self):
        cc = build_claim_cues("Rescue workers responded to the missile strike aftermath.")
        hit = "Rescue workers responded quickly to the aftermath of the missile strike."
        assert infer_stance(cc, ClaimCategory.CONTEXTUAL, None, hit) is Stance.SUPPORTS
        assert (
            infer_stance(cc, ClaimCategory.CONTEXTUAL, None, "unrelated text entirely")
            is Stance.RELATED
        )


# ---------------------------------------------------------------------------
# source context extraction

def test_extract_source_context_local_cues():
    result = make_result(
        "https://herald.example/a",
        title="Strike hits Dnipro",
        snippet="By Olena Marchenko. Strike on 04/05/2022 near 48.4647, 35.0462.",
    )
    context = extract_source_context(result, result.snippet)
    assert context.when is not None and context.when.date == dt.date(2022, 5, 4)
    assert context.where is not None and context.where.geo is not None
    assert context.where.geo.lat == pytest.approx(48.4647)
    assert context.who == "Olena Marchenko"


def test_extract_source_context_provider_fields_win():
    result = make_result("https://a.example/1", snippet="Strike on 07/05/2022.")
    context = extract_source_context(
        result, result.snippet, {"when": "04/05/2022", "who": "Jane Doe"}
    )
    assert context.when is not None and context.when.date == dt.date(2022, 5, 4)
    assert context.who == "Jane Doe"


def test_extract_source_context_empty_raises():
    result = make_result("https://a.example/1", title="", snippet="")
    with pytest.raises(UnextractableSource):
        extract_source_context(result, "")


# ---------------------------------------------------------------------------
# query generation

def _temporal_claim(cid="c01", text="The footage was recorded on 04/05/2022 in Dnipro."):
    return Claim(cid, text, "caption", ClaimCategory.TEMPORAL,
                 route_tools(ClaimCategory.TEMPORAL))


def _section_for(claims):
    return Section(
        section_id="sec-temporal",
        category=ClaimCategory.TEMPORAL,
        priority=0,
        claim_ids=tuple(c.claim_id for c in claims),
    )


def test_generate_queries_seed_iteration():
    claims = [_temporal_claim()]
    [query] = generate_queries(_section_for(claims), claims, [], 0)
    assert query.origin == "seed"
    assert query.iteration == 0
    assert "dnipro" in query.text or "Dnipro" in query.text


def test_generate_queries_skips_issued():
    claims = [_temporal_claim()]
    [query] = generate_queries(_section_for(claims), claims, [], 0)
    again = generate_queries(_section_for(claims), claims, [], 0, {query.text})
    assert again == []


def test_generate_queries_refines_with_context():
    claims = [_temporal_claim(text="Footage recorded on 04/05/2022.")]
    seed = generate_queries(_section_for(claims), claims, [], 0)[0].text
    prior = [
        SourceContext(
            where=WhereContext(place_name="Zaporizhzhia"),
            who="Olena Marchenko",
        )
    ]
    [refined] = generate_queries(
        _section_for(claims), claims, prior, 1, {seed}
    )
    assert refined.origin == "refined"
    assert "Zaporizhzhia" in refined.text


def test_generate_queries_dedup_within_batch():
    claims = [_temporal_claim("c01"), _temporal_claim("c02")]
    queries = generate_queries(_section_for(claims), claims, [], 0)
    assert len(queries) == 1  # identical text collapses


# ---------------------------------------------------------------------------
# metadata and forensic tools

def _video_asset(path: Path) -> MediaAsset:
    return MediaAsset(path.name, path, MediaKind.VIDEO, path.stat().st_size)


def _video_analysis(created: dt.datetime | None) -> VideoAnalysis:
    return VideoAnalysis(
        asset_id="clip.mp4",
        duration_s=1.0,
        fps=10.0,
        frame_count=10,
        resolution=(96, 64),
        codec="mp42",
        container_created_utc=created,
        container_modified_utc=created,
        keyframes=(),
        descriptions=(),
    )


def _fake_video_asset() -> MediaAsset:
    return MediaAsset("clip.mp4", Path("/nonexistent/clip.mp4"), MediaKind.VIDEO, 1)


def test_metadata_tool_reads_container_times():
    created = dt.datetime(2022, 5, 4, 19, 58, 37, tzinfo=UTC)
    candidates = run_metadata_tool(
        _fake_video_asset(), _video_analysis(created), ["Overlay: 04/05/2022 19:58"]
    )
    found = [c for c in candidates if c.field == "container-created"]
    assert found and found[0].consistent is True
    assert "2022" in found[0].value


def test_metadata_tool_flags_overlay_mismatch():
    created = dt.datetime(2022, 5, 4, 19, 58, 37, tzinfo=UTC)
    candidates = run_metadata_tool(
        _fake_video_asset(), _video_analysis(created), ["shown 11/11/2021"]
    )
    found = [c for c in candidates if c.field == "container-created"]
    assert found[0].consistent is False


def test_metadata_tool_no_overlay_dates_is_unjudged():
    created = dt.datetime(2022, 5, 4, tzinfo=UTC)
    candidates = run_metadata_tool(_fake_video_asset(), _video_analysis(created), [])
    found = [c for c in candidates if c.field == "container-created"]
    assert found[0].consistent is None


def test_metadata_tool_unset_times_yield_nothing():
    assert run_metadata_tool(_fake_video_asset(), _video_analysis(None), []) == []


def test_metadata_tool_image_fields():
    analysis = ImageAnalysis(
        asset_id="shot.jpg",
        resolution=(32, 24),
        exif_datetime=dt.datetime(2022, 5, 4, 19, 58, 37),
        camera="ACME CamX",
        gps=(48.4647, 35.0462),
        matches=(),
    )
    asset = MediaAsset("shot.jpg", Path("/nonexistent/shot.jpg"), MediaKind.IMAGE, 1)
    by_field = {c.field: c for c in run_metadata_tool(asset, analysis, ["04/05/2022"])}
    assert by_field["exif-datetime"].consistent is True
    assert by_field["exif-gps"].value == "48.4647° N, 35.0462° E"
    assert by_field["camera-model"].value == "ACME CamX"


def test_forensic_clean_video(tmp_path):
    path = tmp_path / "clean.mp4"
    make_cut_video(path, pre_frames=12, post_frames=12, seed=11)
    findings = run_forensic_tool(_video_asset(path))
    assert findings.authenticity is Authenticity.NO_MANIPULATION
    assert findings.synthetic_type is None
    assert "satellite-imagery-comparison (not implemented)" in findings.methods


def test_forensic_flags_duplicated_frames(tmp_path):
    path = tmp_path / "loop.mp4"
    make_constant_video(path, frames=24)  # every frame identical
    findings = run_forensic_tool(_video_asset(path))
    assert findings.authenticity is Authenticity.SUSPECTED_MANIPULATION
    assert findings.synthetic_type == "possible looped or duplicated frames"


def test_forensic_undecodable_video_inconclusive(tmp_path):
    path = tmp_path / "junk.mp4"
    path.write_bytes(b"\x00" * 128)
    findings = run_forensic_tool(_video_asset(path))
    assert findings.authenticity is Authenticity.INCONCLUSIVE


def test_aggregate_forensics_worst_wins(tmp_path):
    clean = tmp_path / "clean.mp4"
    make_cut_video(clean, 10, 10, seed=2)
    looped = tmp_path / "loop.mp4"
    make_constant_video(looped, frames=20)
    combined = aggregate_forensics(
        [run_forensic_tool(_video_asset(clean)), run_forensic_tool(_video_asset(looped))]
    )
    assert combined.authenticity is Authenticity.SUSPECTED_MANIPULATION


def test_aggregate_forensics_empty():
    combined = aggregate_forensics([])
    assert combined.authenticity is Authenticity.INCONCLUSIVE


# ---------------------------------------------------------------------------
# the research loop, driven by scripted tools

def _replay_gateway(tmp_path) -> ProviderGateway:
    return ProviderGateway(ReplayCache(tmp_path / "fixtures", GatewayMode.REPLAY))


def _registry_with(fn, kinds=(ToolKind.METADATA_ANALYSIS,)):
    registry = ToolRegistry()
    noop = lambda rt: None  # noqa: E731
    for kind in ToolKind:
        registry.register(kind, noop)
    for kind in kinds:
        registry.register(kind, fn)
    return registry


def test_research_section_rejects_mismatched_claims(tmp_path):
    claims = [_temporal_claim("c01")]
    section = _section_for([_temporal_claim("c99")])
    with pytest.raises(ValueError):
        research_section(
            section, claims, _registry_with(lambda rt: None), _replay_gateway(tmp_path)
        )


def test_research_section_stops_when_covered(tmp_path):
    claims = [_temporal_claim("c01")]
    section = _section_for(claims)

    def supportive_tool(rt):
        if rt.iteration > 0:
            return
        for i, url in enumerate(["https://a.example/1", "https://b.example/2"]):
            assert rt.charge()
            step = rt.record_step("scripted", {"i": i}, {"url": url})
            rt.add_evidence(
                stance=Stance.SUPPORTS,
                claim_ids=("c01",),
                content=f"confirmation {i}",
                source=make_result(url),
                context=None,
                step_id=step,
            )

    research = research_section(
        section, claims, _registry_with(supportive_tool), _replay_gateway(tmp_path)
    )
    assert research.iterations_run == 1  # two domains reached, loop stops
    assert research.coverage_gap is False
    assert research.uncovered_claims == ()
    assert len(research.evidence) == 2
    assert research.tool_calls == 2
    validate_provenance(research.records)


def test_research_section_budget_exhaustion_flags_evidence(tmp_path):
    claims = [_temporal_claim("c01")]
    section = _section_for(claims)

    def weak_tool(rt):
        if not rt.charge():
            return
        step = rt.record_step("scripted", {"it": rt.iteration}, {})
        rt.add_evidence(
            stance=Stance.SUPPORTS,
            claim_ids=("c01",),
            content=f"single-domain hint {rt.iteration}",
            source=make_result("https://only.example/1"),
            context=None,
            step_id=step,
        )

    budget = ResearchBudget(max_iterations=2, max_tool_calls=24)
    research = research_section(
        section, claims, _registry_with(weak_tool), _replay_gateway(tmp_path), budget
    )
    assert research.iterations_run == 2  # never covered, ran out of iterations
    assert research.coverage_gap is True
    assert research.uncovered_claims == ("c01",)
    assert all(ev.coverage_gap for ev in research.evidence)


def test_research_section_tool_call_cap(tmp_path):
    claims = [_temporal_claim("c01")]
    section = _section_for(claims)
    calls = []

    def greedy_tool(rt):
        while rt.charge():
            calls.append(rt.iteration)
            rt.record_step("scripted", {"n": len(calls)}, {})

    budget = ResearchBudget(max_iterations=3, max_tool_calls=5)
    research = research_section(
        section, claims, _registry_with(greedy_tool), _replay_gateway(tmp_path), budget
    )
    assert research.tool_calls == 5
    assert research.iterations_run == 1  # exhausted inside the first iteration
    assert research.coverage_gap is True


def test_research_section_outage_stops_early(tmp_path):
    claims = [_temporal_claim("c01")]
    section = _section_for(claims)

    def failing_tool(rt):
        if rt.charge():
            rt.record_failure("scripted", {"it": rt.iteration}, RuntimeError("down"))

    budget = ResearchBudget(max_iterations=3, max_tool_calls=24)
    research = research_section(
        section, claims, _registry_with(failing_tool), _replay_gateway(tmp_path), budget
    )
    # every call of iteration one failed: outage, stop with partials
    assert research.iterations_run == 1
    assert research.coverage_gap is True
    assert research.evidence == ()


def test_research_section_empty_claims(tmp_path):
    section = Section("sec-temporal", ClaimCategory.TEMPORAL, 0, ())
    research = research_section(
        section, [], _registry_with(lambda rt: None), _replay_gateway(tmp_path)
    )
    assert research.iterations_run == 0
    assert research.coverage_gap is False
    assert len(research.records) == 1  # just the section-start record


# ---------------------------------------------------------------------------
# provenance validation

def _rec(step_id, parents=(), ts=0):
    return ProvenanceRecord(
        step_id=step_id,
        tool="t",
        input_digest=DIGEST,
        output_digest=DIGEST,
        timestamp=dt.datetime(2024, 1, 1, tzinfo=UTC) + dt.timedelta(seconds=ts),
        parents=tuple(parents),
    )


def test_validate_provenance_accepts_chain():
    validate_provenance(
        [_rec("a"), _rec("b", ["a"], 1), _rec("c", ["a", "b"], 2)]
    )


def test_validate_provenance_rejects_empty():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([])


def test_validate_provenance_rejects_duplicate_ids():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a"), _rec("a", ["a"], 1)])


def test_validate_provenance_rejects_second_root():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a"), _rec("b")])


def test_validate_provenance_rejects_unknown_parent():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a"), _rec("b", ["ghost"], 1)])


def test_validate_provenance_rejects_rooted_first_record():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a", ["b"]), _rec("b", ["a"], 1)])


def test_validate_provenance_rejects_forward_parent():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a"), _rec("b", ["c"], 1), _rec("c", ["a"], 2)])


def test_validate_provenance_rejects_time_regression():
    with pytest.raises(ProvenanceInvalid):
        validate_provenance([_rec("a", ts=5), _rec("b", ["a"], ts=1)])
