import numpy as np
import pytest

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "status": "PASS", "notes": []})
    if report.failed:
        entry["status"] = "FAIL"
    elif report.skipped and report.when in ("setup", "call") and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    for key, value in item.user_properties:
        if key == "criterion_note" and value not in entry["notes"]:
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        line = f"criterion {number}: {entry['status']}  {entry['title']}"
        terminalreporter.write_line(line)
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("ETCW_WORKERS", raising=False)
    return tmp_path
