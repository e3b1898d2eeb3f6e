import numpy as np
import pytest

from tvsl.data import SyntheticWorld, SyntheticWorldSpec, generate_synthetic_world


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def world():
    return SyntheticWorld(SyntheticWorldSpec())


@pytest.fixture(scope="session")
def small_world_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    generate_synthetic_world(SyntheticWorldSpec(n_train=48, n_test=16, seed=3), root)
    return root


_CRITERIA: dict = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.passed, self.detail = None, ""

    def check(self, ok, detail=""):
        self.detail = "; ".join(x for x in (self.detail, detail) if x)
        self.passed = bool(ok) if self.passed is None else self.passed and bool(ok)
        assert ok, f"criterion {self.number}: {detail}"

    def __enter__(self):
        _CRITERIA[self.number] = self
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.passed = False
            self.detail = self.detail or f"{exc_type.__name__}: {exc}"
        line = f"criterion {self.number} [{self.title}]: {'PASS' if self.passed else 'FAIL'} {self.detail}"
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        c = _CRITERIA[n]
        terminalreporter.write_line(
            f"criterion {n} [{c.title}]: {'PASS' if c.passed else 'FAIL'} {c.detail}")
