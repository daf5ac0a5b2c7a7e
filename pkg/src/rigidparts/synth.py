"""Synthetic articulated tubes with known parts, transforms and joints.

A chain is one closed capsule along +x split into ``K`` segments of equal
length; a star is a hub with ``K - 1`` capsule limbs radiating in the xy-plane.
Every joint is a hinge: pose ``i`` rotates the distal side about the joint
axis through the pivot, composed down the chain.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .evaluation import band_mask
from .mesh import Mesh, PartLabeling, RegisteredSet
from .rigid import RigidTransform, TransformSet


@dataclass(frozen=True)
class SynthSpec:
    part_count: int = 3
    topology: str = "chain"
    n_poses: int = 5
    segment_length: float = 1.0
    radius: float = 0.15
    vertices_per_segment: int = 500
    # (K-1, 3) hinge axes; default +z for every joint
    joint_axes: np.ndarray = None
    # (n_poses, K-1) hinge angles in radians; default drawn from ``seed``
    angles: np.ndarray = None
    max_angle: float = math.radians(35.0)
    noise_sigma: float = 0.0
    global_motion: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.part_count < 1 or self.n_poses < 1:
            raise ParameterError("part_count and n_poses must be >= 1")
        if self.topology not in ("chain", "star"):
            raise ParameterError(f"topology must be 'chain' or 'star', got {self.topology!r}")
        if self.topology == "star" and self.part_count < 2:
            raise ParameterError("a star needs at least 2 parts")
        if self.vertices_per_segment < 12:
            raise ParameterError("need at least 12 vertices per segment")
        if not (self.segment_length > 0 and self.radius > 0):
            raise ParameterError("segment_length and radius must be positive")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be nonnegative")
        if self.angles is not None:
            a = np.asarray(self.angles, dtype=np.float64).reshape(self.n_poses, self.part_count - 1)
            if (np.abs(a) >= math.pi).any():
                raise ParameterError("hinge angles must lie in (-pi, pi)")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    labeling: PartLabeling
    transforms: TransformSet
    # [((p, q), position), ...] in template coordinates, 1-based parts
    joints: list
    # vertices incident to an edge crossing each joint's boundary
    boundary_vertices: list
    angles: np.ndarray = field(default=None)

    def band(self, mesh: Mesh, rings: int = 1) -> np.ndarray:
        """Boolean mask of vertices within ``rings`` hops of a true part boundary."""
        return band_mask(mesh, self.boundary_vertices, rings)


def _tube_layout(length, radius, target):
    """Stations per segment and vertices per ring for near-equilateral triangles."""
    n_st = max(2, int(round(math.sqrt(target * length / (2 * math.pi * radius)))))
    n_around = max(6, int(round(target / n_st)))
    return n_st, n_around


def _ring(center, u, v, radius, n_around, phase):
    ang = 2 * np.pi * (np.arange(n_around) + phase) / n_around
    return center + radius * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)


def _stitch(a0, b0, n):
    """Triangles joining ring starting at index ``a0`` to ring starting at ``b0``."""
    k = np.arange(n)
    k1 = (k + 1) % n
    return np.concatenate(
        [np.stack([a0 + k, a0 + k1, b0 + k], axis=1), np.stack([a0 + k1, b0 + k1, b0 + k], axis=1)]
    )


def _fan(apex, ring0, n, flip=False):
    k = np.arange(n)
    tri = np.stack([np.full(n, apex), ring0 + (k + 1) % n, ring0 + k], axis=1)
    return tri[:, ::-1] if flip else tri


def _basis(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, axis)
    u /= np.linalg.norm(u)
    return axis, u, np.cross(axis, u)


class _Builder:
    def __init__(self):
        self.points, self.tris, self.labels = [], [], []
        self.count = 0

    def add(self, pts, label):
        start = self.count
        pts = np.atleast_2d(pts)
        self.points.append(pts)
        self.labels.append(np.full(len(pts), label))
        self.count += len(pts)
        return start

    def tube(self, start, direction, stations, station_labels, radius, n_around, step, cap_start):
        """Rings at distances ``stations`` along ``direction`` from ``start``, capped at the far end.

        Returns the index of the first ring (the open start when ``cap_start`` is false).
        """
        axis, u, v = _basis(np.asarray(direction, dtype=np.float64))
        n_cap = max(1, int(round(0.5 * math.pi * radius / step)))
        prev = None
        if cap_start:
            apex = self.add(start + (stations[0] - radius) * axis, station_labels[0])
            for k in range(n_cap - 1, 0, -1):
                phi = 0.5 * math.pi * k / n_cap
                c = start + (stations[0] - radius * math.sin(phi)) * axis
                s0 = self.add(_ring(c, u, v, radius * math.cos(phi), n_around, 0.0), station_labels[0])
                self.tris.append(_fan(apex, s0, n_around) if prev is None else _stitch(prev, s0, n_around))
                prev = s0
            if prev is None:
                prev = apex
                first_is_apex = True
            else:
                first_is_apex = False
        first_ring = None
        for dist, lab in zip(stations, station_labels):
            s0 = self.add(_ring(start + dist * axis, u, v, radius, n_around, 0.0), lab)
            if first_ring is None:
                first_ring = s0
                if cap_start:
                    self.tris.append(_fan(prev, s0, n_around) if first_is_apex else _stitch(prev, s0, n_around))
            else:
                self.tris.append(_stitch(prev, s0, n_around))
            prev = s0
        end = start + stations[-1] * axis
        for k in range(1, n_cap):
            phi = 0.5 * math.pi * k / n_cap
            s0 = self.add(_ring(end + radius * math.sin(phi) * axis, u, v, radius * math.cos(phi), n_around, 0.0), station_labels[-1])
            self.tris.append(_stitch(prev, s0, n_around))
            prev = s0
        apex = self.add(end + radius * axis, station_labels[-1])
        self.tris.append(_fan(apex, prev, n_around, flip=True))
        return first_ring

    def mesh(self):
        return Mesh(np.concatenate(self.points), np.concatenate(self.tris)), np.concatenate(self.labels).astype(np.int64)


def _hinge(axis, pivot, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    rot = RigidTransform.from_rotvec(axis * angle)
    pivot = np.asarray(pivot, dtype=np.float64)
    return RigidTransform(rot.quaternion, pivot - rot.rotation @ pivot)


def _random_rigid(rng):
    q = rng.normal(size=4)
    return RigidTransform(q, rng.normal(size=3))


def build_template(spec: SynthSpec):
    """Template mesh, 0-based segment per vertex, joint pivots ``(K-1, 3)`` and joint parents.

    Joint ``k`` links parent segment ``parents[k]`` to segment ``k + 1``; the
    ring of vertices at a pivot belongs to the parent side.
    """
    k_parts = spec.part_count
    length = spec.segment_length
    n_st, n_around = _tube_layout(length, spec.radius, spec.vertices_per_segment)
    step = length / n_st
    b = _Builder()
    if spec.topology == "chain":
        total = k_parts * n_st
        stations = np.arange(total + 1) * step
        labs = [min(k_parts - 1, max(0, math.ceil(s / n_st) - 1)) for s in range(total + 1)]
        b.tube(np.zeros(3), [1.0, 0.0, 0.0], stations, labs, spec.radius, n_around, step, cap_start=True)
        pivots = np.array([[k * length, 0.0, 0.0] for k in range(1, k_parts)]).reshape(-1, 3)
        parents = list(range(k_parts - 1))
    else:
        n_limbs = k_parts - 1
        hub_st = max(1, int(round(0.5 * length / step)))
        center = b.add(np.zeros(3), 0)
        pivots = []
        for limb in range(n_limbs):
            ang = 2 * math.pi * limb / n_limbs
            d = np.array([math.cos(ang), math.sin(ang), 0.0])
            stations = np.arange(1, hub_st + n_st + 1) * step
            labs = [0 if s <= hub_st else limb + 1 for s in range(1, hub_st + n_st + 1)]
            first = b.tube(np.zeros(3), d, stations, labs, spec.radius, n_around, step, cap_start=False)
            b.tris.append(_fan(center, first, n_around, flip=True))
            pivots.append(d * hub_st * step)
        pivots = np.array(pivots).reshape(-1, 3)
        parents = [0] * n_limbs
    mesh, seg = b.mesh()
    return mesh, seg, pivots, parents


def _default_angles(spec, rng):
    n_j = spec.part_count - 1
    if n_j == 0:
        return np.zeros((spec.n_poses, 0))
    if spec.n_poses == 1:
        return rng.uniform(-spec.max_angle, spec.max_angle, size=(1, n_j))
    base = np.linspace(-spec.max_angle, spec.max_angle, spec.n_poses)
    return np.stack([rng.permutation(base) for _ in range(n_j)], axis=1)


def generate(spec: SynthSpec):
    """Registered set and ground truth for ``spec`` (noise included when ``noise_sigma > 0``)."""
    rng = np.random.default_rng(spec.seed)
    mesh, seg, pivots, parents = build_template(spec)
    k_parts = spec.part_count
    n_joints = k_parts - 1
    axes = np.tile([0.0, 0.0, 1.0], (n_joints, 1)) if spec.joint_axes is None else np.asarray(spec.joint_axes, dtype=np.float64).reshape(n_joints, 3)
    angles = _default_angles(spec, rng) if spec.angles is None else np.asarray(spec.angles, dtype=np.float64).reshape(spec.n_poses, n_joints)

    grid = []
    for i in range(spec.n_poses):
        base = _random_rigid(rng) if spec.global_motion else RigidTransform.identity()
        seg_tf = [base] + [None] * n_joints
        # joint k connects parent segment parents[k] to segment k + 1
        for k in range(n_joints):
            seg_tf[k + 1] = seg_tf[parents[k]].compose(_hinge(axes[k], pivots[k], angles[i, k]))
        grid.append(seg_tf)
    ts = TransformSet.from_grid(grid)
    labeling = PartLabeling(seg + 1, k_parts)
    inst = ts.predict(mesh.points, seg)
    rset = RegisteredSet(mesh, inst)
    if spec.noise_sigma > 0:
        rset = add_noise(rset, spec.noise_sigma, rng.integers(2**63))

    e = mesh.edges
    joints, boundary = [], []
    for k in range(n_joints):
        p, q = parents[k] + 1, k + 2
        cross = ((seg[e[:, 0]] == p - 1) & (seg[e[:, 1]] == q - 1)) | ((seg[e[:, 0]] == q - 1) & (seg[e[:, 1]] == p - 1))
        joints.append(((p, q), np.asarray(pivots[k], dtype=np.float64)))
        boundary.append(np.unique(e[cross].ravel()))
    return rset, GroundTruth(labeling, ts, joints, boundary, angles)


def add_noise(rset: RegisteredSet, noise_sigma: float, seed=None) -> RegisteredSet:
    """Independent Gaussian offsets (std ``noise_sigma`` per coordinate) on every instance point."""
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be nonnegative")
    if noise_sigma == 0:
        return RegisteredSet(rset.template, rset.instances)
    rng = np.random.default_rng(seed)
    return RegisteredSet(rset.template, rset.instances + rng.normal(scale=noise_sigma, size=rset.instances.shape))
