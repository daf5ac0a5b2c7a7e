import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import path_mesh, ring_mesh
from oracles import brute_force_labeling, naive_label_costs, naive_labeling_score
from rigidparts.errors import ParameterError
from rigidparts.labeling import (
    ModelParams,
    build_labeling_lp,
    cost_matrix,
    e_step,
    enforce_hard_contiguity,
    objective,
    singleton_cost,
    solve_labeling,
    split_components,
)
from rigidparts.mesh import Mesh, PartLabeling, RegisteredSet
from rigidparts.rigid import RigidTransform, TransformSet
from rigidparts.synth import SynthSpec, generate


def random_problem(rng, mesh, n_parts, n_inst=2, spread=0.5):
    """Random instances and transforms giving unstructured singleton costs."""
    inst = mesh.points[None] + rng.normal(scale=spread, size=(n_inst, mesh.n_points, 3))
    q = rng.normal(size=(n_inst, n_parts, 4))
    t = rng.normal(scale=spread, size=(n_inst, n_parts, 3))
    q[..., 0] += 4.0  # small rotations
    return RegisteredSet(mesh, inst), TransformSet(q, t)


class TestParams:
    def test_derived(self):
        p = ModelParams(0.5, 0.9)
        assert p.separation == pytest.approx(math.log(9))
        assert p.delta == pytest.approx(0.5 / math.log(9))

    @pytest.mark.parametrize("kw", [dict(sigma_sq=0), dict(sigma_sq=1, tau=0.5), dict(sigma_sq=1, tau=1.0), dict(sigma_sq=1, gamma=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            ModelParams(**kw)


class TestSingletonCost:
    def setup_method(self):
        self.mesh = path_mesh(2)

    def test_perfect_fit_zero(self, rng):
        tf = RigidTransform(rng.normal(size=4), rng.normal(size=3))
        rset = RegisteredSet(self.mesh, tf(self.mesh.points)[None])
        ts = TransformSet.from_grid([[tf]])
        assert singleton_cost(rset, ts, 1, 1, ModelParams(0.3)) == 0.0

    def test_one_instance(self):
        sigma_sq = 0.25
        inst = self.mesh.points.copy()
        inst[0] += [math.sqrt(2 * sigma_sq), 0, 0]
        rset = RegisteredSet(self.mesh, inst[None])
        ts = TransformSet.identity(1, 1)
        assert singleton_cost(rset, ts, 0, 1, ModelParams(sigma_sq)) == pytest.approx(-1.0)

    def test_three_instances(self):
        sigma_sq = 0.5
        inst = np.repeat(self.mesh.points[None], 3, axis=0)
        for i, k in enumerate((1, 2, 3)):
            inst[i, 0, 1] += math.sqrt(k * sigma_sq)
        rset = RegisteredSet(self.mesh, inst)
        assert singleton_cost(rset, TransformSet.identity(3, 1), 0, 1, ModelParams(sigma_sq)) == pytest.approx(-3.0)

    def test_matrix_matches_naive(self, rng):
        mesh = ring_mesh(7, rng)
        rset, ts = random_problem(rng, mesh, 3, n_inst=3)
        params = ModelParams(0.2)
        expect = naive_label_costs(mesh.points, rset.instances, ts.rotations, ts.translations, 0.2)
        assert np.allclose(cost_matrix(rset, ts, params), expect, rtol=1e-12, atol=1e-12)
        assert singleton_cost(rset, ts, 4, 2, params) == pytest.approx(expect[4, 1], rel=1e-12)


class TestBuildLP:
    def test_sizes_single(self):
        lp = build_labeling_lp(np.zeros((1, 2)), np.zeros((0, 2)), 1.0)
        assert lp.n_vars == 2 and lp.n_rows == 1

    def test_sizes_path(self):
        lp = build_labeling_lp(np.zeros((3, 2)), [(0, 1), (1, 2)], 1.0)
        assert lp.n_vars == 10
        assert (lp.sense == 0).sum() == 3 and (lp.sense == -1).sum() == 8

    def test_huge_separation_merges(self):
        costs = np.array([[0.0, -1.0], [-3.0, 0.0]])
        labels, _, integral, _ = solve_labeling(costs, [(0, 1)], 1e6)
        assert integral
        # label 1 totals -3, label 2 totals -1
        assert labels.tolist() == [2, 2]

    def test_rejects_nonpositive_separation(self):
        with pytest.raises(ParameterError):
            build_labeling_lp(np.zeros((2, 2)), [(0, 1)], 0.0)


class TestEStep:
    def test_single_part(self, rng):
        mesh = path_mesh(5, rng)
        rset, ts = random_problem(rng, mesh, 1)
        params = ModelParams(0.3)
        lab, obj, integral = e_step(rset, ts, mesh, params)
        assert (lab.labels == 1).all() and integral
        expect = cost_matrix(rset, ts, params)[:, 0].sum() + len(mesh.edges) * math.log(0.9)
        assert obj == pytest.approx(expect, rel=1e-12)

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        j = int(rng.integers(3, 9))
        mesh = path_mesh(j, rng) if seed % 2 else ring_mesh(j, rng)
        rset, ts = random_problem(rng, mesh, 2)
        params = ModelParams(float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.6, 0.95)))
        lab, obj, integral = e_step(rset, ts, mesh, params, seed=seed)
        costs = naive_label_costs(mesh.points, rset.instances, ts.rotations, ts.translations, params.sigma_sq)
        _, best = brute_force_labeling(costs, mesh.edges, params.tau)
        if integral:
            assert obj == pytest.approx(best, rel=1e-9, abs=1e-9)
        else:
            assert obj <= best + 1e-9

    def test_ground_truth_recovered_on_hinge(self):
        rset, gt = generate(SynthSpec(part_count=2, n_poses=3, vertices_per_segment=120, seed=4))
        from rigidparts.mesh import mesh_resolution

        params = ModelParams(mesh_resolution(rset.template) ** 2)
        lab, _, integral = e_step(rset, gt.transforms, rset.template, params)
        assert integral
        assert lab == gt.labeling

    @given(st.integers(0, 10**6))
    def test_per_vertex_shift_invariance(self, seed):
        rng = np.random.default_rng(seed)
        mesh = ring_mesh(6, rng)
        costs = rng.normal(size=(6, 3))
        shift = rng.normal(scale=5, size=(6, 1))
        a, _, ia, _ = solve_labeling(costs, mesh.edges, 1.5)
        b, _, ib, _ = solve_labeling(costs + shift, mesh.edges, 1.5)
        if ia and ib:
            score = lambda lab: costs[np.arange(6), lab - 1].sum() - 1.5 * (lab[mesh.edges[:, 0]] != lab[mesh.edges[:, 1]]).sum()
            assert score(a) == pytest.approx(score(b), abs=1e-9)


class TestObjective:
    def test_uniform_perfect(self):
        mesh = ring_mesh(5)
        rset = RegisteredSet(mesh, mesh.points[None])
        val = objective(rset, TransformSet.identity(1, 2), PartLabeling(np.ones(5, dtype=int), 2), mesh, ModelParams(1.0))
        assert val == pytest.approx(5 * math.log(0.9))

    def test_one_disagreeing_edge(self):
        mesh = path_mesh(4)
        rset = RegisteredSet(mesh, mesh.points[None])
        val = objective(rset, TransformSet.identity(1, 2), PartLabeling([1, 1, 2, 2]), mesh, ModelParams(1.0))
        assert val == pytest.approx(2 * math.log(0.9) + math.log(0.1))

    def test_matches_naive(self, rng):
        for _ in range(10):
            mesh = ring_mesh(6, rng)
            rset, ts = random_problem(rng, mesh, 3)
            params = ModelParams(0.4, 0.8)
            lab = rng.integers(0, 3, size=6)
            costs = naive_label_costs(mesh.points, rset.instances, ts.rotations, ts.translations, 0.4)
            val = objective(rset, ts, PartLabeling(lab + 1, 3), mesh, params)
            assert val == pytest.approx(naive_labeling_score(costs, mesh.edges, lab, 0.8), rel=1e-12)

    def test_incremental_consistency(self, rng):
        mesh = ring_mesh(8, rng)
        rset, ts = random_problem(rng, mesh, 3)
        params = ModelParams(0.3, 0.85)
        lab = rng.integers(1, 4, size=8)
        costs = cost_matrix(rset, ts, params)
        for j in range(8):
            other = lab.copy()
            other[j] = lab[j] % 3 + 1
            diff = objective(rset, ts, PartLabeling(other, 3), mesh, params) - objective(rset, ts, PartLabeling(lab, 3), mesh, params)
            local = costs[j, other[j] - 1] - costs[j, lab[j] - 1]
            for a, b in mesh.edges:
                if j in (a, b):
                    k = b if a == j else a
                    before = lab[j] == lab[k]
                    after = other[j] == other[k]
                    local += (math.log(0.85) if after else math.log(0.15)) - (math.log(0.85) if before else math.log(0.15))
            assert diff == pytest.approx(local, abs=1e-9)


class TestContiguity:
    def test_already_contiguous(self):
        mesh = path_mesh(5)
        lab = PartLabeling([1, 1, 2, 2, 2])
        ts = TransformSet.identity(2, 2)
        out, ts2 = enforce_hard_contiguity(lab, ts, mesh)
        assert out == lab
        assert np.array_equal(ts2.quaternions, ts.quaternions)

    def test_split_path(self, rng):
        mesh = path_mesh(5)
        lab = PartLabeling([1, 1, 2, 1, 1])
        ts = TransformSet(rng.normal(size=(2, 2, 4)), rng.normal(size=(2, 2, 3)))
        out, ts2 = enforce_hard_contiguity(lab, ts, mesh)
        assert out.labels.tolist() == [1, 1, 2, 3, 3]
        assert np.array_equal(ts2.quaternions[:, 0], ts.quaternions[:, 0])
        assert np.array_equal(ts2.quaternions[:, 2], ts.quaternions[:, 0])
        assert np.array_equal(ts2.translations[:, 1], ts.translations[:, 1])

    def test_disjoint_components(self):
        mesh = Mesh(np.random.default_rng(0).normal(size=(6, 3)), [(0, 1, 2), (3, 4, 5)])
        out, ts2 = enforce_hard_contiguity(PartLabeling(np.ones(6, dtype=int)), TransformSet.identity(1, 1), mesh)
        assert out.part_count == 2 and ts2.n_parts == 2

    def test_empty_parts_dropped(self):
        out, origin = split_components(PartLabeling([3, 3, 3], 4), path_mesh(3))
        assert out.part_count == 1 and origin.tolist() == [2]

    @given(st.integers(0, 10**6))
    def test_objective_unchanged(self, seed):
        rng = np.random.default_rng(seed)
        mesh = ring_mesh(9, rng)
        rset, ts = random_problem(rng, mesh, 3)
        params = ModelParams(0.3)
        lab = PartLabeling(rng.integers(1, 4, size=9), 3)
        before = objective(rset, ts, lab, mesh, params)
        out, ts2 = enforce_hard_contiguity(lab, ts, mesh)
        after = objective(rset, ts2, out, mesh, params)
        assert abs(after - before) <= 1e-12 * max(1.0, abs(before))
