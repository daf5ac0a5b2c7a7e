import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rigidparts.mesh import Mesh

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def path_mesh(n, rng=None):
    """Vertices 0..n-1 on a line, joined by the path edges only."""
    pts = np.zeros((n, 3))
    pts[:, 0] = np.arange(n)
    if rng is not None:
        pts += rng.normal(scale=0.1, size=pts.shape)
    return Mesh(pts, np.zeros((0, 3), dtype=np.int64), edges=[(k, k + 1) for k in range(n - 1)])


def ring_mesh(n, rng=None):
    ang = 2 * np.pi * np.arange(n) / n
    pts = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
    if rng is not None:
        pts += rng.normal(scale=0.1, size=pts.shape)
    return Mesh(pts, np.zeros((0, 3), dtype=np.int64), edges=[(k, (k + 1) % n) for k in range(n)])


def cube_mesh():
    pts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    # two triangles per face, diagonals chosen so each face adds one sqrt(2) edge
    tris = [
        (0, 1, 3), (0, 3, 2),  # x = 0
        (4, 6, 7), (4, 7, 5),  # x = 1
        (0, 4, 5), (0, 5, 1),  # y = 0
        (2, 3, 7), (2, 7, 6),  # y = 1
        (0, 2, 6), (0, 6, 4),  # z = 0
        (1, 5, 7), (1, 7, 3),  # z = 1
    ]
    return Mesh(pts, tris)


def grid_mesh(nx, ny):
    """Planar triangulated grid, ``nx * ny`` vertices."""
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1).astype(float)
    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = i * ny + j, (i + 1) * ny + j, (i + 1) * ny + j + 1, i * ny + j + 1
            tris += [(a, b, c), (a, c, d)]
    return Mesh(pts, tris)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
