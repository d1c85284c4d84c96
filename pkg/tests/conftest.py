import numpy as np
import pytest

from hpn.geometry import Primitive, SceneSpec


def sphere_scene(r=0.25, center=(0.5, 0.5, 0.5)):
    return SceneSpec((Primitive("sphere", (r,), translation=center),))


def box_scene(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return SceneSpec((Primitive("box", tuple((hi - lo) / 2), translation=tuple((hi + lo) / 2)),))


@pytest.fixture
def sphere():
    return sphere_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def primitives():
    """One posed instance of each primitive kind."""
    return [
        Primitive("sphere", (0.2,), translation=(0.5, 0.5, 0.5)),
        Primitive("box", (0.2, 0.1, 0.15), 0.4, 0.3, (0.5, 0.45, 0.5)),
        Primitive("cylinder", (0.12, 0.2), 1.1, -0.4, (0.5, 0.5, 0.55)),
        Primitive("capsule", (0.1, 0.18), 2.0, 0.5, (0.45, 0.5, 0.5)),
    ]


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
