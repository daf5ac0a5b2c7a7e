import numpy as np
import pytest
from scipy.sparse import csr_matrix

from conftest import grid_mesh
from rigidparts import _kernels as k

pytestmark = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not installed")


def adjacency(mesh):
    e = mesh.edges
    n = mesh.n_points
    a = csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
    a.sort_indices()
    return a.indptr.astype(np.int64), a.indices.astype(np.int64)


def test_bfs_hops():
    indptr, indices = adjacency(grid_mesh(7, 5))
    for src in (0, 12, 34):
        for hops in (1, 3, 100):
            assert np.array_equal(k.bfs_hops_nb(indptr, indices, src, hops), k.bfs_hops_np(indptr, indices, src, hops))


def test_component_labels(rng):
    indptr, indices = adjacency(grid_mesh(6, 6))
    for _ in range(10):
        mask = rng.random(36) < 0.5
        assert np.array_equal(k.component_labels_nb(indptr, indices, mask), k.component_labels_np(indptr, indices, mask))


def test_residual_matrix(rng):
    pts = rng.normal(size=(40, 3))
    inst = rng.normal(size=(3, 40, 3))
    rot = np.linalg.qr(rng.normal(size=(3, 4, 3, 3)))[0]
    trans = rng.normal(size=(3, 4, 3))
    a = k.residual_matrix_nb(pts, inst, rot, trans)
    b = k.residual_matrix_np(pts, inst, rot, trans)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_kt_phases(rng):
    alpha = rng.dirichlet(np.ones(4), size=30)
    draws_l = rng.integers(0, 4, size=500)
    draws_t = 1.0 - rng.random(500)
    la = np.full(30, -1, dtype=np.int64)
    lb = la.copy()
    assert k.kt_phases_nb(alpha, la, draws_l, draws_t) == k.kt_phases_np(alpha, lb, draws_l, draws_t)
    assert np.array_equal(la, lb)


def test_nearest_center(rng):
    x = rng.normal(size=(100, 6))
    c = rng.normal(size=(5, 6))
    la, da = k.nearest_center_nb(x, c)
    lb, db = k.nearest_center_np(x, c)
    assert np.array_equal(la, lb)
    assert np.allclose(da, db)


def test_backend_name():
    assert k.backend() in ("numba", "numpy")


def test_env_flag_selects_numpy():
    import os
    import subprocess
    import sys

    env = dict(os.environ, RIGIDPARTS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from rigidparts._kernels import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
