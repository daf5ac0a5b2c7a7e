import math

import numpy as np
import pytest

from conftest import path_mesh
from oracles import grid_joint, joint_objective_naive
from rigidparts.errors import AmbiguousJointError, ParameterError, StructuralInputError
from rigidparts.labeling import ModelParams
from rigidparts.mesh import PartLabeling, RegisteredSet
from rigidparts.rigid import RigidTransform, TransformSet
from rigidparts.skeleton import (
    auto_gamma,
    boundary_centroids,
    build_skeleton,
    estimate_joint,
    joint_objective,
    part_adjacency,
)
from rigidparts.synth import SynthSpec, generate


def hinge_set(angles_deg, pivot=(1.0, 0.0, 0.0), axis=(0, 0, 1)):
    """Part 1 fixed, part 2 rotated about ``axis`` through ``pivot``."""
    grid = []
    pivot = np.asarray(pivot, dtype=float)
    for a in angles_deg:
        r = RigidTransform.from_rotvec(np.asarray(axis, dtype=float) * math.radians(a))
        grid.append([RigidTransform.identity(), RigidTransform(r.quaternion, pivot - r.rotation @ pivot)])
    return TransformSet.from_grid(grid)


class TestAdjacency:
    def test_single_part(self):
        assert part_adjacency(PartLabeling([1, 1, 1]), path_mesh(3)) == []

    def test_two_parts(self):
        adj = part_adjacency(PartLabeling([1, 1, 2, 2, 2]), path_mesh(5))
        assert len(adj) == 1 and adj[0][0] == (1, 2)
        assert adj[0][1].tolist() == [[1, 2]]

    def test_chain_never_skips(self):
        adj = part_adjacency(PartLabeling([1, 1, 2, 2, 3, 3]), path_mesh(6))
        assert [pq for pq, _ in adj] == [(1, 2), (2, 3)]

    def test_min_boundary_edges(self):
        assert part_adjacency(PartLabeling([1, 1, 2, 2]), path_mesh(4), min_boundary_edges=2) == []


class TestCentroids:
    def test_one_edge(self):
        m = path_mesh(2)
        rset = RegisteredSet(m, np.array([[[0, 0, 0], [2, 0, 0.0]]]))
        assert np.allclose(boundary_centroids(rset, [(0, 1)]), [[1, 0, 0]])

    def test_two_edges(self):
        m = path_mesh(4)
        rset = RegisteredSet(m, np.array([[[0, 0, 0], [2, 0, 0], [2, 0, 0], [4, 0, 0.0]]]))
        assert np.allclose(boundary_centroids(rset, [(0, 1), (2, 3)]), [[2, 0, 0]])

    def test_naive(self, rng):
        m = path_mesh(6)
        rset = RegisteredSet(m, rng.normal(size=(3, 6, 3)))
        ce = [(0, 1), (2, 3), (4, 5)]
        naive = [np.mean([(rset.instances[i, a] + rset.instances[i, b]) / 2 for a, b in ce], axis=0) for i in range(3)]
        assert np.allclose(boundary_centroids(rset, ce), naive)

    def test_empty(self):
        m = path_mesh(2)
        with pytest.raises(StructuralInputError):
            boundary_centroids(RegisteredSet(m, m.points), [])


class TestEstimateJoint:
    def test_identical_motion_gives_centroid_mean(self, rng):
        ts = TransformSet.identity(3, 2)
        c = rng.normal(size=(3, 3))
        j = estimate_joint(1, 2, ts, c, gamma=0.5)
        assert np.allclose(j.position, c.mean(axis=0))

    def test_identical_motion_without_gamma_is_error(self):
        with pytest.raises(AmbiguousJointError):
            estimate_joint(1, 2, TransformSet.identity(2, 2), np.zeros((2, 3)), gamma=0.0)

    def test_hinge_line(self):
        ts = hinge_set([30, 60])
        j = estimate_joint(1, 2, ts, np.array([[1, 0, 0.5]] * 2), gamma=0.0)
        assert j.ambiguous
        assert abs(j.position[0] - 1) <= 1e-8 and abs(j.position[1]) <= 1e-8
        assert j.residual <= 1e-12
        # nullspace shift puts the point level with the centroid
        assert j.position[2] == pytest.approx(0.5)

    def test_regularized_matches_grid(self):
        ts = hinge_set([30, 60])
        c = np.array([[1, 0, 0.5]] * 2)
        j = estimate_joint(1, 2, ts, c, gamma=0.1)
        rp, rq = ts.rotations[:, 0], ts.rotations[:, 1]
        tp, tq = ts.translations[:, 0], ts.translations[:, 1]
        y, _ = grid_joint(rp, tp, rq, tq, c, 0.1, lo=[0, -1, -0.5], hi=[2, 1, 1.5])
        assert np.abs(j.position - y).max() <= 2e-3
        assert j.residual == pytest.approx(joint_objective_naive(j.position, rp, tp, rq, tq, c, 0.1), abs=1e-12)

    def test_local_minimum(self, rng):
        ts = TransformSet(rng.normal(size=(4, 2, 4)), rng.normal(size=(4, 2, 3)))
        c = rng.normal(size=(4, 3))
        j = estimate_joint(1, 2, ts, c, gamma=0.3)
        base = joint_objective(j.position, 1, 2, ts, c, 0.3)
        for d in np.vstack([np.eye(3), -np.eye(3)]):
            assert joint_objective(j.position + 1e-4 * d, 1, 2, ts, c, 0.3) >= base

    def test_equivariance(self, rng):
        ts = hinge_set([20, 50, -30], pivot=(0.3, 0.2, 0.1), axis=(0, 1, 1) / np.sqrt(2))
        c = rng.normal(scale=0.1, size=(3, 3)) + [0.3, 0.2, 0.1]
        j0 = estimate_joint(1, 2, ts, c, gamma=0.2)
        g = RigidTransform(rng.normal(size=4), rng.normal(size=3))
        # template moved by g: every part transform becomes T o g^-1
        gi = g.inverse()
        grid = [[ts[i, p].compose(gi) for p in range(2)] for i in range(3)]
        j1 = estimate_joint(1, 2, TransformSet.from_grid(grid), c, gamma=0.2)
        assert np.allclose(j1.position, g(j0.position), atol=1e-8)

    def test_auto_gamma(self):
        ts = hinge_set([30, 60])
        c = np.array([[1, 0, 0.5]] * 2)
        g = auto_gamma(1, 2, ts, c)
        assert g > 0
        assert estimate_joint(1, 2, ts, c).gamma == pytest.approx(g)
        assert auto_gamma(1, 2, TransformSet.identity(2, 2), c) == 1.0

    def test_negative_gamma(self):
        with pytest.raises(ParameterError):
            estimate_joint(1, 2, hinge_set([30]), np.zeros((1, 3)), gamma=-1.0)


class TestBuild:
    def test_single_part(self):
        rset, gt = generate(SynthSpec(part_count=1, n_poses=2, vertices_per_segment=60))
        model = build_skeleton(rset, rset.template, gt.labeling, gt.transforms)
        assert model.joints == [] and model.part_count == 1

    def test_chain_joints(self):
        rset, gt = generate(SynthSpec(part_count=3, n_poses=4, vertices_per_segment=150, seed=1))
        model = build_skeleton(rset, rset.template, gt.labeling, gt.transforms, ModelParams(0.01))
        assert [j.parts for j in model.joints] == [(1, 2), (2, 3)]
        for j, (_, pos) in zip(model.joints, gt.joints):
            assert np.linalg.norm(j.position - pos) <= 0.05
        assert [pq for pq, _ in model.adjacency] == [(1, 2), (2, 3)]
        assert all(n > 0 for _, n in model.adjacency)

    def test_ground_truth_joint_has_zero_hinge_residual(self):
        rset, gt = generate(SynthSpec(part_count=3, n_poses=3, vertices_per_segment=100, seed=6))
        for (p, q), pos in gt.joints:
            assert joint_objective(pos, p, q, gt.transforms, None, 0.0) <= 1e-24
