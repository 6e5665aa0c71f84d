import numpy as np
import pytest

from emgpipe.dataset import SyntheticSpec, generate_synthetic_recordings
from emgpipe.features import WindowSpec, extract_feature_table
from emgpipe.preprocess import PreprocessConfig, preprocess

ACCEPTANCE_LINES = []

# envelope first, then 0.6 Hz smoothing; used wherever a run must separate gestures
SMOOTH = PreprocessConfig(stage_order="envelope_then_filter")


def record_acceptance(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def raw_recordings():
    return generate_synthetic_recordings(SyntheticSpec())


@pytest.fixture(scope="session")
def envelopes(raw_recordings):
    return [preprocess(r, SMOOTH) for r in raw_recordings]


@pytest.fixture(scope="session")
def table200(envelopes):
    return extract_feature_table(envelopes, None, WindowSpec(200.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
