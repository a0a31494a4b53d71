import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
FIXTURES = TESTS_DIR / "fixtures"

sys.path.insert(0, str(TESTS_DIR))  # makes oracles/ importable from tests

from libforge.gateway import GatewayConfig, LMGateway  # noqa: E402
from libforge.model import Candidate, Provenance  # noqa: E402


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def stub_gateway() -> LMGateway:
    return LMGateway(GatewayConfig())


@pytest.fixture
def vocab_aware_gateway() -> LMGateway:
    return LMGateway(GatewayConfig(scorer_endpoint="stub:vocab-aware"))


def make_candidate(library: str, rewritten: dict[str, str]) -> Candidate:
    return Candidate.create(
        library=library,
        rewritten=rewritten,
        provenance=Provenance(model="test", temperature=0.0, sample_index=0, prompt_sha256=""),
    )


@pytest.fixture
def candidate_factory():
    return make_candidate


_ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS.append((name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in _ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
