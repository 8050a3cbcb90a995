import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=25)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from mfsac.config import SCENARIO_DIR, load_scenario  # noqa: E402


@pytest.fixture(scope="session")
def scalar_scenario():
    return load_scenario(SCENARIO_DIR / "scalar_two_atom.json")


@pytest.fixture(scope="session")
def base_scenario():
    return load_scenario(SCENARIO_DIR / "base.json")


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(num: int, title: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[num] = (title, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {title}: {detail}")
