import numpy as np
import pytest

from spectramin.datasets import LabeledDataset
from spectramin.spectra import GridSpec, SpectrumKind


def make_dataset(values, labels, species=None, grid=None, kind=SpectrumKind.RAMAN):
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    grid = grid or GridSpec(0.0, float(values.shape[1] - 1), values.shape[1])
    species = species or tuple(f"s{i}" for i in range(int(labels.max()) + 1))
    return LabeledDataset(values, labels, tuple(species), grid, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blobs(rng):
    """Three well separated classes of 8 samples on a 32-point grid."""
    centers = rng.random((3, 32))
    values, labels = [], []
    for c in range(3):
        for _ in range(8):
            values.append(np.clip(centers[c] + rng.normal(0, 0.02, 32), 0, 1))
            labels.append(c)
    return make_dataset(values, labels, ("alpha", "beta", "gamma"))


# one PASS/FAIL line per acceptance criterion, printed after the run
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        number = int(name.split("_")[2])
        detail = getattr(report, "acceptance_detail", "")
        _CRITERIA[number] = (name, "PASS" if report.passed else "FAIL", detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report.acceptance_detail = getattr(item, "acceptance_detail", "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {status}  {name}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def record(request):
    """Attach a short measurement string to the acceptance line for this test."""
    def _record(text):
        request.node.acceptance_detail = text
    return _record
