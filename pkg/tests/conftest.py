import numpy as np
import pytest

from lamina.geometry import TriMesh


def unit_cube_mesh():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    # index = 4x + 2y + z
    quads = [
        (0, 2, 3, 1), (4, 5, 7, 6),  # x = 0, x = 1
        (0, 1, 5, 4), (2, 6, 7, 3),  # y = 0, y = 1
        (0, 4, 6, 2), (1, 3, 7, 5),  # z = 0, z = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.array(faces))


def semicircle(radius=1.0, y=0.0, n=64):
    th = np.linspace(0.0, np.pi, n)
    return np.column_stack([radius * np.cos(th), np.full(n, y), radius * np.sin(th)])


@pytest.fixture
def cube():
    return unit_cube_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
