"""Shared fixtures: MNIST data discovery, skip handling, and the
acceptance-criteria summary block."""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def find_mnist_dir():
    candidates = [
        os.environ.get("BIJEPA_MNIST_DIR"),
        "mnist-data",
        Path.home() / "mnist-data",
        "/root/mnist-data",
    ]
    for cand in candidates:
        if cand and (Path(cand) / "train-images-idx3-ubyte").exists():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = find_mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not available "
                    "(run `bijepa fetch-mnist` or set BIJEPA_MNIST_DIR)")
    return d
