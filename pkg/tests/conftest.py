from __future__ import annotations

import pytest

from kvclaims.fixtures import generate_canonical_fixtures


@pytest.fixture
def canonical_fixtures(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    generate_canonical_fixtures(out)
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
