import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twinbeam import SampleParams, SourceParams, calibrate, generate_batch  # noqa: E402


@pytest.fixture(scope="session")
def nominal_source():
    return SourceParams(mu=1e6, eta1=0.62, eta2=0.62)


@pytest.fixture(scope="session")
def nominal_calibration(nominal_source):
    return calibrate(generate_batch(nominal_source, SampleParams(0.0), n_frames=100_000, seed=11))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
