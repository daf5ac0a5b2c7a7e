import json

import numpy as np
import pytest

from conftest import grid_mesh
from rigidparts.errors import CorrespondenceError, FormatError
from rigidparts.fileio import (
    load_registered_set,
    model_from_dict,
    model_to_dict,
    part_colors,
    read_mesh,
    read_model,
    read_ply,
    read_trace,
    read_truth,
    write_colored,
    write_mesh,
    write_model,
    write_ply,
    write_trace,
    write_truth,
)
from rigidparts.em import EMConfig, run_em
from rigidparts.skeleton import build_skeleton
from rigidparts.synth import SynthSpec, generate


@pytest.fixture(scope="module")
def fitted():
    rset, gt = generate(SynthSpec(part_count=2, n_poses=3, vertices_per_segment=100, seed=3))
    lab, ts, trace = run_em(rset, rset.template, EMConfig(initial_part_count=4, max_iterations=6))
    return rset, gt, build_skeleton(rset, rset.template, lab, ts), trace


def awkward_points(rng, n=30):
    pts = rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-8, 8, size=(n, 1))
    pts[0] = [0.1, 1 / 3, -0.0]
    return pts


class TestMeshFiles:
    @pytest.mark.parametrize("name,binary", [("m.ply", False), ("m.ply", True), ("m.obj", False)])
    def test_roundtrip_exact(self, tmp_path, rng, name, binary):
        m = grid_mesh(5, 6)
        pts = awkward_points(rng, m.n_points)
        write_mesh(tmp_path / name, pts, m.triangles, binary=binary)
        got, tris = read_mesh(tmp_path / name)
        assert np.array_equal(got, pts)
        assert np.array_equal(tris, m.triangles)

    def test_binary_bytes_stable(self, tmp_path, rng):
        m = grid_mesh(3, 3)
        pts = awkward_points(rng, 9)
        write_ply(tmp_path / "a.ply", pts, m.triangles, binary=True)
        p2, t2 = read_ply(tmp_path / "a.ply")
        write_ply(tmp_path / "b.ply", p2, t2, binary=True)
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()

    def test_float_vertices_and_quads(self, tmp_path):
        text = ("ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
                "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
                "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        (tmp_path / "q.ply").write_text(text)
        with pytest.raises(FormatError, match="only triangles"):
            read_ply(tmp_path / "q.ply")

    def test_points_only(self, tmp_path):
        write_ply(tmp_path / "p.ply", np.eye(3))
        pts, tris = read_ply(tmp_path / "p.ply")
        assert tris is None and np.array_equal(pts, np.eye(3))

    @pytest.mark.parametrize("text,where", [
        ("plx\n", "line 1"),
        ("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n1 1\n", "line 9"),
        ("ply\nformat ascii 1.0\nelement vertex two\n", "line 3"),
        ("ply\nformat binary_big_endian 1.0\nend_header\n", "line 2"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty double y\nproperty double z\nend_header\n0 0 0\n", "float or double"),
    ])
    def test_malformed_ply(self, tmp_path, text, where):
        (tmp_path / "bad.ply").write_text(text)
        with pytest.raises(FormatError, match=where):
            read_ply(tmp_path / "bad.ply")

    def test_truncated_binary_reports_offset(self, tmp_path):
        write_ply(tmp_path / "t.ply", np.ones((4, 3)), [(0, 1, 2), (1, 2, 3)], binary=True)
        data = (tmp_path / "t.ply").read_bytes()
        (tmp_path / "t.ply").write_bytes(data[:-5])
        with pytest.raises(FormatError, match="byte offset"):
            read_ply(tmp_path / "t.ply")

    @pytest.mark.parametrize("text,where", [("v 0 0 x\n", "line 1"), ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", "line 5"),
                                            ("v 0 0 0\nf 1 0 2\n", "line 2")])
    def test_malformed_obj(self, tmp_path, text, where):
        (tmp_path / "bad.obj").write_text(text)
        with pytest.raises(FormatError, match=where):
            read_mesh(tmp_path / "bad.obj")

    def test_obj_negative_indices(self, tmp_path):
        (tmp_path / "n.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1 -2/2 -1/3\n")
        _, tris = read_mesh(tmp_path / "n.obj")
        assert tris.tolist() == [[0, 1, 2]]

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(FormatError):
            read_mesh(tmp_path / "m.stl")

    def test_registered_set(self, tmp_path, rng):
        m = grid_mesh(3, 4)
        write_mesh(tmp_path / "t.ply", m.points, m.triangles)
        inst = rng.normal(size=(2, 12, 3))
        for i in range(2):
            write_mesh(tmp_path / f"i{i}.obj", inst[i], m.triangles)
        rset = load_registered_set(tmp_path / "t.ply", [tmp_path / "i0.obj", tmp_path / "i1.obj"])
        assert np.array_equal(rset.instances, inst)
        write_mesh(tmp_path / "short.ply", inst[0][:11])
        with pytest.raises(CorrespondenceError, match="short.ply.*t.ply"):
            load_registered_set(tmp_path / "t.ply", [tmp_path / "short.ply"])


class TestModelJson:
    def test_roundtrip(self, tmp_path, fitted):
        _, _, model, _ = fitted
        write_model(tmp_path / "model.json", model, {"seed": 3})
        back = read_model(tmp_path / "model.json")
        assert back.labeling == model.labeling
        assert np.array_equal(back.transforms.quaternions, model.transforms.quaternions)
        assert np.array_equal(back.transforms.translations, model.transforms.translations)
        for a, b in zip(back.joints, model.joints):
            assert a.parts == b.parts and np.array_equal(a.position, b.position) and a.residual == b.residual
        assert model_to_dict(back, {"seed": 3}) == model_to_dict(model, {"seed": 3})

    def test_single_part_model(self, tmp_path):
        rset, gt = generate(SynthSpec(part_count=1, n_poses=2, vertices_per_segment=40))
        model = build_skeleton(rset, rset.template, gt.labeling, gt.transforms)
        write_model(tmp_path / "m.json", model)
        d = json.loads((tmp_path / "m.json").read_text())
        assert d["joints"] == [] and len(d["parts"]) == 1
        assert read_model(tmp_path / "m.json").part_count == 1

    def test_malformed(self, tmp_path, fitted):
        d = model_to_dict(fitted[2])
        del d["parts"][0]["transforms"]
        with pytest.raises(FormatError):
            model_from_dict(d)
        (tmp_path / "x.json").write_text("{ nope")
        with pytest.raises(FormatError, match="line 1"):
            read_model(tmp_path / "x.json")


class TestTruthAndTrace:
    def test_truth_roundtrip(self, tmp_path):
        _, gt = generate(SynthSpec(part_count=3, n_poses=2, vertices_per_segment=60))
        write_truth(tmp_path / "gt.json", gt, {"part_count": 3, "segment_length": 1.0})
        lab, joints, boundary, meta = read_truth(tmp_path / "gt.json")
        assert lab == gt.labeling
        assert [pq for pq, _ in joints] == [pq for pq, _ in gt.joints]
        assert all(np.array_equal(a, b) for a, b in zip(boundary, gt.boundary_vertices))
        assert meta["part_count"] == 3

    @pytest.mark.parametrize("where", ["top", "meta", "part", "joint"])
    def test_truth_rejects_unknown(self, tmp_path, where):
        _, gt = generate(SynthSpec(part_count=2, n_poses=1, vertices_per_segment=40))
        write_truth(tmp_path / "gt.json", gt, {})
        d = json.loads((tmp_path / "gt.json").read_text())
        target = {"top": d, "meta": d["meta"], "part": d["parts"][0], "joint": d["joints"][0]}[where]
        target["surprise"] = 1
        (tmp_path / "gt.json").write_text(json.dumps(d))
        with pytest.raises(FormatError, match="surprise"):
            read_truth(tmp_path / "gt.json")

    def test_trace(self, tmp_path, fitted):
        trace = fitted[3]
        write_trace(tmp_path / "t.csv", trace)
        rows = read_trace(tmp_path / "t.csv")
        assert len(rows) == trace.iterations
        assert rows == [(a, float(b), float(c), d, bool(e)) for a, b, c, d, e in trace.rows()]

    def test_colors(self, tmp_path, fitted):
        rset, _, model, _ = fitted
        c = part_colors(12)
        assert np.array_equal(c, part_colors(12))
        assert len({tuple(r) for r in c}) == 12
        write_colored(tmp_path / "a.ply", rset.template, model.labeling)
        write_colored(tmp_path / "b.ply", rset.template, model.labeling)
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
        pts, tris = read_ply(tmp_path / "a.ply")
        assert np.array_equal(pts, rset.template.points)
