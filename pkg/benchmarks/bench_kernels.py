"""Time each hot kernel in its numba and numpy flavour on fixture-sized inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. The first numba
call per kernel (compilation, or loading the on-disk cache) is excluded.
"""

import argparse
import timeit

import numpy as np

from rigidparts import _kernels as k
from rigidparts.mesh import csr_from_edges
from rigidparts.synth import SynthSpec, generate


def cases(rng):
    rset, _ = generate(SynthSpec(part_count=5, n_poses=5, vertices_per_segment=450, seed=0))
    mesh = rset.template
    indptr, indices = csr_from_edges(mesh.n_points, mesh.edges)
    n, j, p = rset.n_instances, rset.n_points, 16
    rot = np.linalg.qr(rng.normal(size=(n, p, 3, 3)))[0]
    trans = rng.normal(size=(n, p, 3))
    alpha = rng.dirichlet(np.ones(p), size=j)
    draws_l = rng.integers(0, p, size=20 * p * 64)
    draws_t = 1.0 - rng.random(draws_l.size)
    mask = rng.random(j) < 0.7
    feats = rng.normal(size=(j, 6 * n))
    centers = feats[rng.choice(j, 16, replace=False)]

    def kt(fn):
        return lambda: fn(alpha, np.full(j, -1, dtype=np.int64), draws_l, draws_t)

    return {
        "bfs_hops": (lambda f: lambda: f(indptr, indices, 0, 1 << 30), k.bfs_hops_nb, k.bfs_hops_np),
        "component_labels": (lambda f: lambda: f(indptr, indices, mask), k.component_labels_nb, k.component_labels_np),
        "residual_matrix": (lambda f: lambda: f(mesh.points, rset.instances, rot, trans), k.residual_matrix_nb, k.residual_matrix_np),
        "kt_phases": (kt, k.kt_phases_nb, k.kt_phases_np),
        "nearest_center": (lambda f: lambda: f(feats, centers), k.nearest_center_nb, k.nearest_center_np),
    }, j


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    table, n_points = cases(np.random.default_rng(0))
    print(f"{n_points} vertices, active backend: {k.backend()}")
    print(f"{'kernel':<18}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (bind, nb, npf) in table.items():
        t_np = min(timeit.repeat(bind(npf), number=1, repeat=args.repeat)) * 1e3
        if nb is None:
            print(f"{name:<18}{'n/a':>12}{t_np:12.3f}{'':>10}")
            continue
        bind(nb)()  # compile or load cache
        t_nb = min(timeit.repeat(bind(nb), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_nb:12.3f}{t_np:12.3f}{t_np / t_nb:9.1f}x")


if __name__ == "__main__":
    main()
