import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# a pipeline small enough to run end to end in a few seconds
TINY = {
    "synthetic": {"class_count": 3, "channels": 2, "length": 16, "samples_per_class": 8,
                  "duration_lo": 6, "duration_hi": 16},
    "diffusion": {"epochs": 5, "hidden": 8},
    "seq": {"width": 8, "heads": 2, "depth": 1, "length": 16, "features": 2, "classes": 3},
    "schedule": {"phases": [["weighted", 2, 1e-3], ["mse", 1, 1e-3], ["weighted", 1, 1e-4]],
                 "epoch_scale": 1.0, "batch_size": 8},
    "segment": {"degree": 6, "fallback": True},
    "evaluation": {"repetitions": 2, "first_per_class": 4, "gen_per_class": 3, "windows": [1, 3],
                   "classifier": {"epochs": 2, "repeats": 1}},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
