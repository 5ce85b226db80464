import numpy as np
import pytest

from thickpoint.measure import PointMeasure

ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    """Store one acceptance outcome for the terminal summary."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def single_atom(pos=0.0, mass=1.0):
    return PointMeasure.from_atoms([pos], [mass])


def uniform(n=4096):
    return PointMeasure(np.linspace(0.0, 1.0, n), np.full(n, 1.0 / n))


def binomial(k=12, p=0.3):
    w = np.array([1.0])
    for _ in range(k):
        w = np.concatenate((w * p, w * (1 - p)))
    return PointMeasure((np.arange(w.size) + 0.5) / w.size, w)


def two_scale(n=4096):
    pos = np.linspace(0.0, 1.0, n)
    m = np.full(n, 0.5 / n)
    return PointMeasure.from_atoms(np.append(pos, 0.5), np.append(m, 0.5))


def cantor(k=10):
    x = np.array([0.0])
    for _ in range(k):
        x = np.concatenate((x / 3, x / 3 + 2 / 3))
    return PointMeasure(np.sort(x) + 0.5 * 3.0 ** -k, np.full(x.size, 1.0 / x.size))


def free_delta(n=4096):
    """Spectral measure of the centre site of the free chain, from the closed-form eigenvectors."""
    k = np.arange(1, n + 1)
    lam = 2 * np.cos(k * np.pi / (n + 1))
    j0 = (n - 1) // 2
    v = np.sqrt(2 / (n + 1)) * np.sin(k * np.pi * (j0 + 1) / (n + 1))
    return PointMeasure.from_atoms(lam, v ** 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
