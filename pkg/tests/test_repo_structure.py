"""
PR 00 — Repository Structure Tests

Tests that verify the foundational repository structure is correct.
These tests ensure every phase in pr_index.md has its module, its tests
and a registered marker.
"""

import os
import re
import pytest


def _index_paths(prefix):
    with open("pr_index.md", "r", encoding="utf-8") as f:
        idx = f.read()
    return sorted({p for p in re.findall(r"(?:sessionguard|tests)/[a-z_]+\.py", idx) if p.startswith(prefix)})


@pytest.mark.pr00
def test_index_links_match_files():
    """Verify every module and test file named in pr_index.md exists"""
    assert os.path.isfile("pr_index.md"), "Missing pr_index.md"
    paths = _index_paths("sessionguard/") + _index_paths("tests/")
    assert paths, "pr_index.md lists no files"
    for path in paths:
        assert os.path.isfile(path), f"{path} referenced in pr_index.md but missing"


@pytest.mark.pr00
def test_every_module_is_indexed():
    """Verify each package module appears in pr_index.md"""
    indexed = set(_index_paths("sessionguard/"))
    for name in os.listdir("sessionguard"):
        if name.endswith(".py") and name != "__init__.py":
            assert f"sessionguard/{name}" in indexed, f"sessionguard/{name} missing from pr_index.md"


@pytest.mark.pr00
def test_phase_markers_registered():
    """Verify pyproject.toml registers pr00 through pr10"""
    with open("pyproject.toml", "r", encoding="utf-8") as f:
        manifest = f.read()
    for n in range(11):
        assert f'"pr{n:02d}:' in manifest, f"marker pr{n:02d} not registered"
    assert 'sessionguard = "sessionguard.cli:run_cli"' in manifest
