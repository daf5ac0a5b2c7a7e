import json

from rigidparts.cli import EXIT_INPUT, EXIT_OK, EXIT_USAGE, main


def test_missing_template(tmp_path, capsys):
    assert main(["fit", "--instances", "a.ply", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "--template" in capsys.readouterr().err


def test_unknown_command():
    assert main(["dance"]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK


def test_missing_file_is_input_error(tmp_path, capsys):
    rc = main(["fit", "--template", str(tmp_path / "none.ply"), "--instances", str(tmp_path / "x.ply"), "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT


def test_garbage_mesh_is_input_error(tmp_path, capsys):
    (tmp_path / "t.ply").write_text("garbage\n")
    rc = main(["fit", "--template", str(tmp_path / "t.ply"), "--instances", str(tmp_path / "t.ply"), "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT
    assert "line 1" in capsys.readouterr().err


def test_bad_parameter_is_input_error(tmp_path):
    assert main(["synth", "--parts", "0", "--out", str(tmp_path)]) == EXIT_INPUT


def test_synth_fit_eval_small(tmp_path, capsys):
    d = tmp_path / "data"
    assert main(["synth", "--parts", "2", "--poses", "3", "--vertices-per-segment", "100", "--format", "obj",
                 "--noise", "0.01", "--out", str(d)]) == EXIT_OK
    inst = sorted(str(p) for p in d.glob("instance_*.obj"))
    assert len(inst) == 3
    out = tmp_path / "fit"
    assert main(["fit", "--template", str(d / "template.obj"), "--instances", *inst, "--parts", "6",
                 "--no-emit-colored", "--out", str(out)]) == EXIT_OK
    assert (out / "model.json").exists() and (out / "trace.csv").exists()
    assert not (out / "parts.ply").exists()
    capsys.readouterr()
    assert main(["eval", "--model", str(out / "model.json"), "--truth", str(d / "ground_truth.json"),
                 "--template", str(d / "template.obj"), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((tmp_path / "r.json").read_text())
    assert report["part_count"] == 2


def test_eval_vertex_mismatch(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, n in ((a, 100), (b, 60)):
        assert main(["synth", "--parts", "2", "--poses", "1", "--vertices-per-segment", str(n), "--out", str(d)]) == EXIT_OK
    assert main(["fit", "--template", str(a / "template.ply"), "--instances", str(a / "instance_00.ply"),
                 "--parts", "2", "--max-iters", "2", "--out", str(a / "fit")]) == EXIT_OK
    rc = main(["eval", "--model", str(a / "fit" / "model.json"), "--truth", str(b / "ground_truth.json"),
               "--template", str(a / "template.ply")])
    assert rc == EXIT_INPUT
