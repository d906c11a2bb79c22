import textwrap

import pytest

from epiflat.scenario import parse_config

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(number: int, title: str, ok: bool, detail: str) -> None:
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] criterion {number:>2}: {title} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


BASE_CONFIG = """
[plan]
gamma = 0.1
I0 = 0.05
beta_accept = 0.22

[plant]
model = SIR
"""


@pytest.fixture
def make_config():
    """Build a ScenarioConfig from the base plan plus extra INI text."""

    def build(extra: str = "", base: str = BASE_CONFIG):
        return parse_config(textwrap.dedent(base) + "\n" + textwrap.dedent(extra))

    return build
