"""Hot inner loops, each in a numba and a pure-numpy flavour.

The numba path is used when numba imports and ``RIGIDPARTS_DISABLE_NUMBA`` is
unset (or "0"). Both flavours are importable directly as ``<name>_nb`` /
``<name>_np`` so tests and the benchmark can compare them.
"""

import os

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RIGIDPARTS_DISABLE_NUMBA", "0") in ("", "0")


def _jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return None


# ---------------------------------------------------------------------------
# breadth-first hop distances


def _bfs_hops_loop(indptr, indices, source, max_hops):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        dv = dist[v]
        if max_hops >= 0 and dv >= max_hops:
            continue
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            if dist[u] < 0:
                dist[u] = dv + 1
                queue[tail] = u
                tail += 1
    return dist


bfs_hops_nb = _jit(_bfs_hops_loop)


def _gather_neighbors(indptr, indices, frontier):
    starts = indptr[frontier]
    lens = indptr[frontier + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=indices.dtype)
    offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
    return indices[offsets + np.arange(total)]


def bfs_hops_np(indptr, indices, source, max_hops):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    d = 0
    while frontier.size and (max_hops < 0 or d < max_hops):
        nbrs = _gather_neighbors(indptr, indices, frontier)
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        d += 1
        dist[nbrs] = d
        frontier = nbrs
    return dist


# ---------------------------------------------------------------------------
# connected components of an induced subgraph


def _component_labels_loop(indptr, indices, mask):
    n = indptr.shape[0] - 1
    comp = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    ncomp = 0
    for s in range(n):
        if not mask[s] or comp[s] >= 0:
            continue
        comp[s] = ncomp
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                u = indices[k]
                if mask[u] and comp[u] < 0:
                    comp[u] = ncomp
                    queue[tail] = u
                    tail += 1
        ncomp += 1
    return comp


component_labels_nb = _jit(_component_labels_loop)


def component_labels_np(indptr, indices, mask):
    n = indptr.shape[0] - 1
    comp = np.full(n, -1, dtype=np.int64)
    sub = np.flatnonzero(mask)
    if sub.size == 0:
        return comp
    adj = csr_matrix((np.ones(indices.shape[0]), indices, indptr), shape=(n, n))
    _, raw = _cc(adj[sub][:, sub], directed=False)
    # renumber so components appear in order of their smallest vertex
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    comp[sub] = rank[raw]
    return comp


# ---------------------------------------------------------------------------
# per (vertex, part) squared residual summed over instances


def _residual_matrix_loop(points, instances, rot, trans):
    n_inst = instances.shape[0]
    n_pts = points.shape[0]
    n_parts = rot.shape[1]
    out = np.zeros((n_pts, n_parts))
    for j in range(n_pts):
        x0 = points[j, 0]
        x1 = points[j, 1]
        x2 = points[j, 2]
        for p in range(n_parts):
            acc = 0.0
            for i in range(n_inst):
                r = rot[i, p]
                t = trans[i, p]
                d0 = instances[i, j, 0] - (r[0, 0] * x0 + r[0, 1] * x1 + r[0, 2] * x2 + t[0])
                d1 = instances[i, j, 1] - (r[1, 0] * x0 + r[1, 1] * x1 + r[1, 2] * x2 + t[1])
                d2 = instances[i, j, 2] - (r[2, 0] * x0 + r[2, 1] * x1 + r[2, 2] * x2 + t[2])
                acc += d0 * d0 + d1 * d1 + d2 * d2
            out[j, p] = acc
    return out


residual_matrix_nb = _jit(_residual_matrix_loop)


def residual_matrix_np(points, instances, rot, trans):
    out = np.zeros((points.shape[0], rot.shape[1]))
    for i in range(instances.shape[0]):
        pred = np.einsum("pab,jb->jpa", rot[i], points) + trans[i][None, :, :]
        diff = instances[i][:, None, :] - pred
        out += np.einsum("jpa,jpa->jp", diff, diff)
    return out


# ---------------------------------------------------------------------------
# randomized threshold phases for rounding a fractional labeling


def _kt_phases_loop(alpha, labels, draw_label, draw_theta):
    n = alpha.shape[0]
    remaining = 0
    for j in range(n):
        if labels[j] < 0:
            remaining += 1
    used = 0
    while remaining > 0 and used < draw_label.shape[0]:
        p = draw_label[used]
        theta = draw_theta[used]
        used += 1
        for j in range(n):
            if labels[j] < 0 and alpha[j, p] >= theta:
                labels[j] = p
                remaining -= 1
    return used


kt_phases_nb = _jit(_kt_phases_loop)


def kt_phases_np(alpha, labels, draw_label, draw_theta):
    used = 0
    unassigned = labels < 0
    while unassigned.any() and used < draw_label.shape[0]:
        p = draw_label[used]
        hit = unassigned & (alpha[:, p] >= draw_theta[used])
        used += 1
        labels[hit] = p
        unassigned &= ~hit
    return used


# ---------------------------------------------------------------------------
# nearest center (k-means assignment)


def _nearest_center_loop(x, centers):
    n = x.shape[0]
    k = centers.shape[0]
    dim = x.shape[1]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for a in range(n):
        bl = 0
        bd = np.inf
        for c in range(k):
            d = 0.0
            for m in range(dim):
                diff = x[a, m] - centers[c, m]
                d += diff * diff
            if d < bd:
                bd = d
                bl = c
        labels[a] = bl
        best[a] = bd
    return labels, best


nearest_center_nb = _jit(_nearest_center_loop)


def nearest_center_np(x, centers):
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(x.shape[0]), labels]


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    bfs_hops = bfs_hops_nb
    component_labels = component_labels_nb
    residual_matrix = residual_matrix_nb
    kt_phases = kt_phases_nb
    nearest_center = nearest_center_nb
else:
    bfs_hops = bfs_hops_np
    component_labels = component_labels_np
    residual_matrix = residual_matrix_np
    kt_phases = kt_phases_np
    nearest_center = nearest_center_np


def backend():
    """Name of the active kernel flavour: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
