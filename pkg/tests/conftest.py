import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from tsbhb.panel import DemandSeries, Panel

sys.path.insert(0, str(Path(__file__).parent))


def make_panel(rows, prefix="s"):
    """Panel from a list of value lists, ids s0, s1, ..."""
    return Panel(tuple(DemandSeries(f"{prefix}{k}", np.asarray(v, float))
                       for k, v in enumerate(rows)))


@pytest.fixture
def sample_path():
    return Path(str(resources.files("tsbhb") / "data" / "sample_panel.csv"))


@pytest.fixture
def example_config_path():
    return Path(str(resources.files("tsbhb") / "data" / "example_config.toml"))


_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert."""

    def record(criterion: str, ok: bool, detail: str = ""):
        line = f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
