import pytest

from cogan.data import SyntheticSpec, generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """8 classes (4 subjects), 3 samples per spectrum, 64 px; 2 subjects in TRAIN."""
    root = tmp_path_factory.mktemp("small") / "data"
    manifest = generate_synthetic_dataset(SyntheticSpec(8, 3, 64, seed=5), root, train_subjects=2)
    return root, manifest


@pytest.fixture(scope="session")
def train20_dataset(tmp_path_factory):
    """20 TRAIN classes / 4 TEST classes, 3 samples per spectrum."""
    root = tmp_path_factory.mktemp("train20") / "data"
    manifest = generate_synthetic_dataset(SyntheticSpec(24, 3, 64, seed=9), root, train_subjects=10)
    return root, manifest


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print the pass/fail line of an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
