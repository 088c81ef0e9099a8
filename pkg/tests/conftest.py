import sys
import time
from pathlib import Path

import numpy as np
import pytest

import dynorm.kernels as kernels

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
REPO = Path(__file__).parent.parent


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.available_backends()[request.param]
    for name in kernels.KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def repo_dir():
    return REPO


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE: dict[int, str] = {}


class _Criterion:
    def __init__(self, number: int, title: str, budget_s: float):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.detail = ""

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._start
        ok = exc_type is None and elapsed < self.budget_s
        note = self.detail
        if exc_type is not None:
            note = f"{note} | {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}".strip(" |")
        elif not ok:
            note = f"{note} | over budget".strip(" |")
        _ACCEPTANCE[self.number] = (
            f"{'PASS' if ok else 'FAIL'}  [{self.number}] {self.title}: {note} "
            f"({elapsed:.2f}s / {self.budget_s:g}s)"
        )
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.2f}s, budget {self.budget_s}s")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
