"""Case package loading, validation, and batch media statistics."""

import datetime as dt

import numpy as np
import pytest
import yaml
from PIL import Image

from veriflow import (
    CasePackage,
    ContextualInfo,
    MediaKind,
    Severity,
    load_case,
    media_mix_stats,
    validate_case,
)
from veriflow.case_ingest import (
    CODE_CASE_ID_MISMATCH,
    CODE_EMPTY_FILE,
    CODE_NO_CONTEXT,
    CODE_NO_MEDIA,
    CODE_POST_URL_INVALID,
    MalformedManifest,
    MissingMedia,
    UnsupportedFormat,
)

from support import make_constant_video


def write_image(path, size=(32, 24)):
    Image.fromarray(np.full((size[1], size[0], 3), 90, np.uint8)).save(path)


def make_case(tmp_path, name="CASE7", *, videos=0, images=1, manifest=None):
    root = tmp_path / name
    root.mkdir()
    for i in range(videos):
        make_constant_video(root / f"{name}-{i + 1}.mp4", frames=5)
    for i in range(images):
        write_image(root / f"{name}-img{i + 1}.jpg")
    if manifest is not None:
        (root / "context.yaml").write_text(yaml.safe_dump(manifest), encoding="utf-8")
    return root


def test_load_case_discovers_media_sorted(tmp_path):
    root = make_case(tmp_path, videos=1, images=1, manifest={"captions": ["a clip"]})
    case = load_case(root)
    assert case.case_id == "CASE7"
    assert [a.asset_id for a in case.assets] == ["CASE7-1.mp4", "CASE7-img1.jpg"]
    assert case.videos()[0].kind is MediaKind.VIDEO
    assert case.images()[0].resolution == (32, 24)
    assert case.context.captions == ("a clip",)


def test_load_case_reads_posts(tmp_path):
    manifest = {
        "case_id": "CASE7",
        "posts": [
            {
                "platform": "twitter",
                "url": "https://twitter.com/u/status/1",
                "text": "clip",
                "posted_at": "2022-05-04T19:58:37Z",
            }
        ],
    }
    case = load_case(make_case(tmp_path, manifest=manifest))
    post = case.context.posts[0]
    assert post.platform == "twitter"
    assert post.posted_at == dt.datetime(2022, 5, 4, 19, 58, 37, tzinfo=dt.timezone.utc)
    assert case.manifest_case_id == "CASE7"


def test_missing_directory(tmp_path):
    with pytest.raises(MissingMedia):
        load_case(tmp_path / "absent")


def test_declared_asset_missing(tmp_path):
    root = make_case(tmp_path, manifest={"assets": ["gone.mp4"]})
    with pytest.raises(MissingMedia):
        load_case(root)


def test_declared_asset_bad_extension(tmp_path):
    root = make_case(tmp_path, manifest={"assets": ["notes.txt"]})
    with pytest.raises(UnsupportedFormat):
        load_case(root)


def test_manifest_must_parse(tmp_path):
    root = make_case(tmp_path)
    (root / "context.yaml").write_text("captions: [unclosed", encoding="utf-8")
    with pytest.raises(MalformedManifest):
        load_case(root)


def test_manifest_type_errors(tmp_path):
    root = make_case(tmp_path)
    (root / "context.yaml").write_text("captions: 7", encoding="utf-8")
    with pytest.raises(MalformedManifest):
        load_case(root)


class TestValidation:
    def test_clean_case(self, tmp_path):
        root = make_case(tmp_path, manifest={"captions": ["ok"]})
        issues = validate_case(load_case(root))
        assert [i for i in issues if i.severity is Severity.ERROR] == []

    def test_no_media_is_error(self, tmp_path):
        root = tmp_path / "EMPTY"
        root.mkdir()
        issues = validate_case(load_case(root))
        assert any(i.code == CODE_NO_MEDIA and i.severity is Severity.ERROR for i in issues)

    def test_empty_file_flagged(self, tmp_path):
        root = make_case(tmp_path, manifest={"captions": ["x"]})
        (root / "blank.jpg").write_bytes(b"")
        issues = validate_case(load_case(root))
        assert any(i.code == CODE_EMPTY_FILE for i in issues)

    def test_missing_context_is_warning(self, tmp_path):
        issues = validate_case(load_case(make_case(tmp_path)))
        found = [i for i in issues if i.code == CODE_NO_CONTEXT]
        assert found and found[0].severity is Severity.WARNING

    def test_bad_post_url(self, tmp_path):
        manifest = {
            "captions": ["x"],
            "posts": [{"platform": "t", "url": "not a url", "text": ""}],
        }
        issues = validate_case(load_case(make_case(tmp_path, manifest=manifest)))
        assert any(i.code == CODE_POST_URL_INVALID for i in issues)

    def test_case_id_mismatch(self, tmp_path):
        root = make_case(tmp_path, manifest={"case_id": "OTHER", "captions": ["x"]})
        issues = validate_case(load_case(root))
        assert any(i.code == CODE_CASE_ID_MISMATCH for i in issues)


def test_media_mix_stats_fractions(tmp_path):
    cases = []
    for i in range(4):
        name = f"S{i}"
        videos = 1 if i < 3 else 0
        images = 1 if i >= 2 else 0
        cases.append(load_case(make_case(tmp_path, name, videos=videos, images=images)))
    stats = media_mix_stats(cases)
    assert stats.total == 4
    assert stats.with_video == 3
    assert stats.with_image == 2
    assert stats.with_both == 1
    assert stats.video_fraction == pytest.approx(0.75)
    assert stats.image_fraction == pytest.approx(0.5)


def test_media_mix_stats_empty_batch():
    from veriflow.case_ingest import EmptyBatch

    with pytest.raises(EmptyBatch):
        media_mix_stats([])
