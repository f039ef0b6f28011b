from __future__ import annotations

import os
from pathlib import Path

import pytest

from macr.backend import Backend, BackendConfig, RetryPolicy, StubTransport
from macr.config import PipelineConfig
from macr.treemodel import RiskLabelSet, parse_dataset

DATA = Path(__file__).parent / "data"
FIXTURE12 = DATA / "fixture12.jsonl"
REGEN = os.environ.get("MACR_REGEN_GOLDEN") == "1"


def check_golden(path: Path, actual: str) -> None:
    """Compare against a committed golden file; MACR_REGEN_GOLDEN=1 rewrites it."""
    if REGEN or not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(actual, encoding="utf-8")
        if not REGEN:
            pytest.fail(f"golden file {path.name} was missing and has been written; review and commit it")
    assert actual == path.read_text(encoding="utf-8")


@pytest.fixture
def labels():
    return RiskLabelSet()


@pytest.fixture
def fixture12(labels):
    return parse_dataset(FIXTURE12, labels)


def make_stub_backend(transport=None, *, max_attempts=3, cache_dir=None, dim=1024, max_inflight=4):
    cfg = BackendConfig(
        retry=RetryPolicy(max_attempts=max_attempts, backoff=0.0),
        cache_dir=cache_dir,
        embedding_dim=dim,
        max_inflight=max_inflight,
    )
    return Backend(cfg, transport if transport is not None else StubTransport(dim=dim))


def stub_config(**kw) -> PipelineConfig:
    kw.setdefault("backend_kind", "stub")
    kw.setdefault("backend", BackendConfig(retry=RetryPolicy(backoff=0.0)))
    return PipelineConfig(**kw)


@pytest.fixture
def stub_backend():
    return make_stub_backend()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
