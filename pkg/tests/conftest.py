import pytest

from helpers import FIXTURES, SCENES
from vidagent.memory import MemoryTypeSelection, ingest_file


@pytest.fixture(scope="session")
def fixture_memories():
    both = MemoryTypeSelection(True, True)
    return {name: ingest_file(FIXTURES / f"{name}.jsonl", both) for name in SCENES}


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
