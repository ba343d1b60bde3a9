import json

import pytest

from fusehar.dataset import SynthConfig, synth_generate

# Small enough that a full run takes a couple of seconds.
TINY_CONFIG = {
    "synth": {"num_classes": 3, "trials_per_class": 5, "frames": 4, "height": 32, "width": 32,
              "inertial_len": 60, "noise_level": 0.05},
    "data_dir": "data",
    "output_dir": "out",
    "sfi_size": 16,
    "depth_train": {"max_epochs": 1},
    "inertial_train": {"max_epochs": 1},
    "runs": 3,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    cfg = SynthConfig(**TINY_CONFIG["synth"])
    manifest = synth_generate(cfg, 7, out)
    return out / "manifest.json", manifest


# -- acceptance summary: one line per criterion ------------------------------

_criteria: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, title = marker.args
    _, ok = _criteria.get(number, (title, True))
    _criteria[number] = (title, ok and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
