import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Config of a 500-patient synthetic run, processed up to the summaries."""
    from pipeline_helpers import make_config, run_until_summaries

    return run_until_summaries(make_config(tmp_path_factory.mktemp("cohort"), n_patients=500))


@pytest.fixture(scope="session")
def small_data(small_cohort):
    from ragehr.pipeline import prepare_data

    return prepare_data(small_cohort)[0]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
