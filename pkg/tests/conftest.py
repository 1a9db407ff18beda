"""Session fixtures: the golden demonstration case, built exactly once."""

from __future__ import annotations

import pytest

from veriflow.demo import build_demo, run_golden


@pytest.fixture(scope="session")
def golden(tmp_path_factory):
    """(case_dir, trust_table_path) for the recorded demonstration case."""
    root = tmp_path_factory.mktemp("golden")
    return build_demo(root)


@pytest.fixture(scope="session")
def golden_run(golden, tmp_path_factory):
    """One completed Replay run of the golden case, shared across tests."""
    case_dir, trust_path = golden
    out_dir = tmp_path_factory.mktemp("golden-run")
    outcome = run_golden(case_dir, trust_path, out_dir)
    assert outcome.exit_code == 0, outcome.status
    return outcome
