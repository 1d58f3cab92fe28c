import pytest
from hypothesis import settings

from vttqs.data import DatasetConfig, SplitSpec, generate_dataset, split_dataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(DatasetConfig(seed=0))


@pytest.fixture(scope="session")
def splits(dataset):
    return split_dataset(dataset, SplitSpec(), seed=0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
