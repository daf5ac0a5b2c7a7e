"""Triangle meshes, registered mesh sets, part labelings and graph utilities."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import ParameterError, StructuralInputError


def build_edges(triangles) -> np.ndarray:
    """Undirected edge set of a triangle list.

    Returns an ``(E, 2)`` int64 array with ``j < k`` in every row, rows sorted
    lexicographically, each adjacency listed once.
    """
    tri = np.asarray(triangles, dtype=np.int64)
    if tri.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if tri.ndim != 2 or tri.shape[1] != 3:
        raise StructuralInputError(f"triangles must have shape (T, 3), got {tri.shape}")
    if (tri < 0).any():
        raise StructuralInputError("negative triangle index")
    if ((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])).any():
        bad = int(np.flatnonzero((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2]))[0])
        raise StructuralInputError(f"triangle {bad} repeats a vertex: {tri[bad].tolist()}")
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def csr_from_edges(n, edges):
    """Symmetric CSR adjacency ``(indptr, indices)`` of an undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    both = np.concatenate([edges, edges[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, np.ascontiguousarray(both[:, 1])


class Mesh:
    """Template mesh: vertex positions, triangles and the derived edge set.

    Parameters
    ----------
    points : array_like, shape (J, 3)
    triangles : array_like, shape (T, 3)
        Vertex-index triples; every index must be in ``[0, J)``.
    edges : array_like, shape (E, 2), optional
        Extra undirected edges (e.g. for path or ring graphs without faces).
    """

    def __init__(self, points, triangles, edges=None):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise StructuralInputError(f"points must have shape (J, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise StructuralInputError("non-finite vertex coordinate")
        tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if tri.size and tri.max() >= pts.shape[0]:
            raise StructuralInputError(
                f"triangle index {int(tri.max())} out of range for {pts.shape[0]} points"
            )
        self.edges = build_edges(tri)
        if edges is not None:
            extra = np.array(edges, dtype=np.int64).reshape(-1, 2)
            if extra.size and (extra.min() < 0 or extra.max() >= pts.shape[0]):
                raise StructuralInputError("edge index out of range")
            if (extra[:, 0] == extra[:, 1]).any():
                raise StructuralInputError("self-loop edge")
            extra.sort(axis=1)
            self.edges = np.unique(np.concatenate([self.edges, extra]), axis=0)
        pts.flags.writeable = False
        tri.flags.writeable = False
        self.edges.flags.writeable = False
        self.points = pts
        self.triangles = tri

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def __repr__(self):
        return f"Mesh(points={self.n_points}, triangles={len(self.triangles)}, edges={len(self.edges)})"

    @cached_property
    def adjacency(self):
        """CSR adjacency ``(indptr, indices)`` with sorted neighbor lists."""
        return csr_from_edges(self.n_points, self.edges)

    def hop_distances(self, source: int, max_hops: int = -1) -> np.ndarray:
        """Graph hop distance from ``source`` (``-1`` where unreachable/beyond ``max_hops``)."""
        indptr, indices = self.adjacency
        return _kernels.bfs_hops(indptr, indices, int(source), int(max_hops))

    def neighborhood(self, vertex: int, hop_radius: int) -> np.ndarray:
        """Sorted vertex indices within ``hop_radius`` hops of ``vertex``."""
        return np.flatnonzero(self.hop_distances(vertex, hop_radius) >= 0)

    def transformed(self, points) -> "Mesh":
        out = Mesh(points, self.triangles)
        out.edges = self.edges
        return out


@dataclass(frozen=True, eq=False)
class RegisteredSet:
    """Template mesh plus ``N`` instance point arrays corresponded by vertex index."""

    template: Mesh
    instances: np.ndarray

    def __post_init__(self):
        inst = np.array(self.instances, dtype=np.float64)
        if inst.ndim == 2:
            inst = inst[None]
        if inst.ndim != 3 or inst.shape[2] != 3 or inst.shape[0] < 1:
            raise StructuralInputError(f"instances must have shape (N>=1, J, 3), got {inst.shape}")
        if inst.shape[1] != self.template.n_points:
            raise StructuralInputError(
                f"instances have {inst.shape[1]} points, template has {self.template.n_points}"
            )
        inst.flags.writeable = False
        object.__setattr__(self, "instances", inst)

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]

    @property
    def n_points(self) -> int:
        return self.template.n_points


@dataclass(frozen=True, eq=False)
class PartLabeling:
    """Per-vertex part ids in ``1..part_count``.

    Parts may be empty until :meth:`compacted` is applied.
    """

    labels: np.ndarray
    part_count: int = field(default=-1)

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64).ravel()
        count = int(self.part_count) if self.part_count >= 0 else int(lab.max(initial=0))
        if lab.size and (lab.min() < 1 or lab.max() > count):
            raise StructuralInputError(f"labels must lie in [1, {count}]")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "part_count", count)

    @property
    def index(self) -> np.ndarray:
        """Zero-based labels for array indexing."""
        return self.labels - 1

    def part_sizes(self) -> np.ndarray:
        return np.bincount(self.index, minlength=self.part_count)

    def members(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.labels == part)

    def compacted(self):
        """Drop empty parts and renumber by smallest member vertex.

        Returns the new labeling and ``kept``: for each new part (0-based), the
        0-based old part id it came from.
        """
        _, first = np.unique(self.labels, return_index=True)
        kept = self.labels[np.sort(first)] - 1
        remap = np.full(self.part_count, -1, dtype=np.int64)
        remap[kept] = np.arange(kept.size)
        return PartLabeling(remap[self.index] + 1, kept.size), kept

    def __eq__(self, other):
        if not isinstance(other, PartLabeling):
            return NotImplemented
        return self.part_count == other.part_count and np.array_equal(self.labels, other.labels)

    __hash__ = None


def connected_components(mesh: Mesh, vertex_subset) -> list:
    """Split a vertex subset into edge-connected components of its induced subgraph.

    Components are sorted arrays, listed in order of their smallest vertex.
    """
    subset = np.asarray(vertex_subset, dtype=np.int64).ravel()
    if subset.size == 0:
        return []
    if subset.min() < 0 or subset.max() >= mesh.n_points:
        raise StructuralInputError("vertex subset index out of range")
    mask = np.zeros(mesh.n_points, dtype=np.bool_)
    mask[subset] = True
    indptr, indices = mesh.adjacency
    comp = _kernels.component_labels(indptr, indices, mask)
    order = np.argsort(comp, kind="stable")
    order = order[comp[order] >= 0]
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    return np.split(order, bounds)


def mesh_resolution(mesh: Mesh) -> float:
    """Lower median of all edge lengths."""
    if len(mesh.edges) == 0:
        raise StructuralInputError("mesh has no edges")
    e = mesh.edges
    lengths = np.sort(np.linalg.norm(mesh.points[e[:, 0]] - mesh.points[e[:, 1]], axis=1))
    return float(lengths[(len(lengths) - 1) // 2])


def _split_counts(sizes, total):
    # D'Hondt allocation: one patch per component first, never more patches than vertices
    sizes = np.asarray(sizes, dtype=np.int64)
    counts = np.ones(len(sizes), dtype=np.int64)
    for _ in range(total - len(sizes)):
        ratio = np.where(counts < sizes, sizes / counts, -1.0)
        counts[int(np.argmax(ratio))] += 1
    return counts


def _farthest_point_patches(mesh, vertices, count, first):
    """Hop-distance farthest-point seeds in one component; returns (seeds, owner)."""
    seeds = [first]
    dists = [mesh.hop_distances(first)[vertices]]
    mind = dists[0].copy()
    for _ in range(count - 1):
        nxt = int(np.argmax(mind))  # ties: lowest vertex index
        seeds.append(int(vertices[nxt]))
        d = mesh.hop_distances(vertices[nxt])[vertices]
        dists.append(d)
        np.minimum(mind, d, out=mind)
    owner = np.argmin(np.stack(dists, axis=1), axis=1)  # ties: lower seed index
    return seeds, owner


def subdivide_patches(mesh: Mesh, patch_count: int, seed=None, first_vertex=None) -> PartLabeling:
    """Split the mesh into ``patch_count`` edge-connected patches of similar size.

    Seeds are placed by farthest-point sampling under hop distance, starting
    from a vertex drawn with ``seed`` (or ``first_vertex`` when given). Every
    vertex joins its nearest seed, ties going to the earlier seed. Disconnected
    meshes get patches per component in proportion to vertex count.
    """
    n = mesh.n_points
    if not 1 <= patch_count <= n:
        raise ParameterError(f"patch_count must be in [1, {n}], got {patch_count}")
    rng = np.random.default_rng(seed)
    comps = connected_components(mesh, np.arange(n))
    if patch_count < len(comps):
        raise ParameterError(
            f"mesh has {len(comps)} components; need at least that many patches, got {patch_count}"
        )
    counts = _split_counts([len(c) for c in comps], patch_count)
    labels = np.empty(n, dtype=np.int64)
    next_id = 0
    for comp, count in zip(comps, counts):
        if first_vertex is not None and first_vertex in comp:
            first = int(first_vertex)
        else:
            first = int(comp[rng.integers(len(comp))])
        _, owner = _farthest_point_patches(mesh, comp, int(count), first)
        labels[comp] = owner + next_id
        next_id += int(count)
    lab, _ = PartLabeling(labels + 1, patch_count).compacted()
    return lab
