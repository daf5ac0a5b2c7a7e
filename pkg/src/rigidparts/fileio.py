"""Mesh files, model and ground-truth JSON, trace CSV and colored part meshes.

Mesh formats are a small subset: ASCII OBJ (``v``/``f`` lines, triangles) and
PLY in ASCII or binary little-endian with float/double ``x y z`` vertices and
a face list of triangles.
"""

import colorsys
import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorrespondenceError, FormatError, StructuralInputError
from .mesh import Mesh, PartLabeling, RegisteredSet
from .rigid import TransformSet
from .skeleton import ArticulatedModel, Joint

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_INT_KINDS = ("i", "u")


# ---------------------------------------------------------------- PLY

def _parse_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError(f"{path}: line 1: missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype) | (prop, ("list", count_dtype, item_dtype))]]
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError(f"{path}: line {lineno}: header not terminated by end_header")
        toks = raw.decode("ascii", errors="replace").split()
        if not toks or toks[0] in ("comment", "obj_info"):
            continue
        key = toks[0]
        if key == "end_header":
            break
        if key == "format":
            if len(toks) != 3 or toks[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}: line {lineno}: unsupported format {' '.join(toks[1:])!r}")
            fmt = toks[1]
        elif key == "element":
            if len(toks) != 3:
                raise FormatError(f"{path}: line {lineno}: malformed element line")
            try:
                count = int(toks[2])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: bad element count {toks[2]!r}") from None
            elements.append([toks[1], count, []])
        elif key == "property":
            if not elements:
                raise FormatError(f"{path}: line {lineno}: property before any element")
            if len(toks) == 5 and toks[1] == "list":
                if toks[2] not in _PLY_TYPES or toks[3] not in _PLY_TYPES:
                    raise FormatError(f"{path}: line {lineno}: unknown list type")
                elements[-1][2].append((toks[4], ("list", _PLY_TYPES[toks[2]], _PLY_TYPES[toks[3]])))
            elif len(toks) == 3 and toks[1] in _PLY_TYPES:
                elements[-1][2].append((toks[2], _PLY_TYPES[toks[1]]))
            else:
                raise FormatError(f"{path}: line {lineno}: unsupported property {' '.join(toks[1:])!r}")
        else:
            raise FormatError(f"{path}: line {lineno}: unexpected header keyword {key!r}")
    if fmt is None:
        raise FormatError(f"{path}: header has no format line")
    return fmt, elements, lineno


def _check_layout(elements, path):
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise FormatError(f"{path}: no vertex element")
    for name, _, props in elements:
        if name == "vertex":
            pnames = [p for p, _ in props]
            for axis in "xyz":
                if axis not in pnames:
                    raise FormatError(f"{path}: vertex element lacks property {axis!r}")
            for p, t in props:
                if isinstance(t, tuple):
                    raise FormatError(f"{path}: list property {p!r} on vertices is not supported")
                if p in ("x", "y", "z") and t not in ("f4", "f8"):
                    raise FormatError(f"{path}: vertex {p} must be float or double, got {t}")
        if name == "face":
            lists = [(p, t) for p, t in props if isinstance(t, tuple)]
            if len(lists) != 1 or lists[0][0] not in ("vertex_indices", "vertex_index"):
                raise FormatError(f"{path}: face element needs one vertex_indices list")
            _, (_, ct, it) = lists[0]
            if ct[0] not in _INT_KINDS or it[0] not in _INT_KINDS:
                raise FormatError(f"{path}: face list types must be integers")


def _read_ascii_body(fh, elements, path, header_lines):
    data = {}
    lineno = header_lines
    lines = iter(fh)
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            raw = next(lines, None)
            lineno += 1
            if raw is None:
                raise FormatError(f"{path}: line {lineno}: unexpected end of file in element {name!r}")
            toks = raw.split()
            pos = 0
            row = {}
            try:
                for p, t in props:
                    if isinstance(t, tuple):
                        n = int(toks[pos])
                        row[p] = [int(v) for v in toks[pos + 1 : pos + 1 + n]]
                        if len(row[p]) != n:
                            raise IndexError
                        pos += 1 + n
                    else:
                        row[p] = float(toks[pos]) if t[0] == "f" else int(toks[pos])
                        pos += 1
            except (IndexError, ValueError):
                raise FormatError(f"{path}: line {lineno}: malformed {name} record") from None
            rows.append(row)
        data[name] = rows
    return data


def _read_binary_body(buf, offset, elements, path):
    data = {}
    for name, count, props in elements:
        has_list = any(isinstance(t, tuple) for _, t in props)
        if not has_list:
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if offset + need > len(buf):
                raise FormatError(f"{path}: byte offset {offset}: truncated {name} element")
            data[name] = np.frombuffer(buf, dtype=dt, count=count, offset=offset)
            offset += need
            continue
        # triangles-only fast path for the usual face layout
        if name == "face" and len(props) == 1:
            _, (_, ct, it) = props[0]
            dt = np.dtype([("n", "<" + ct), ("i", "<" + it, (3,))])
            need = dt.itemsize * count
            if offset + need <= len(buf):
                rec = np.frombuffer(buf, dtype=dt, count=count, offset=offset)
                if (rec["n"] == 3).all():
                    data[name] = {"vertex_indices": rec["i"].astype(np.int64)}
                    offset += need
                    continue
        rows = []
        for k in range(count):
            row = {}
            for p, t in props:
                if isinstance(t, tuple):
                    _, ct, it = t
                    cdt, idt = np.dtype("<" + ct), np.dtype("<" + it)
                    if offset + cdt.itemsize > len(buf):
                        raise FormatError(f"{path}: byte offset {offset}: truncated {name} record {k}")
                    n = int(np.frombuffer(buf, dtype=cdt, count=1, offset=offset)[0])
                    offset += cdt.itemsize
                    if offset + n * idt.itemsize > len(buf):
                        raise FormatError(f"{path}: byte offset {offset}: truncated {name} record {k}")
                    row[p] = np.frombuffer(buf, dtype=idt, count=n, offset=offset).tolist()
                    offset += n * idt.itemsize
                else:
                    dt = np.dtype("<" + t)
                    if offset + dt.itemsize > len(buf):
                        raise FormatError(f"{path}: byte offset {offset}: truncated {name} record {k}")
                    row[p] = np.frombuffer(buf, dtype=dt, count=1, offset=offset)[0]
                    offset += dt.itemsize
            rows.append(row)
        data[name] = rows
    return data


def _faces_to_triangles(faces, path):
    if isinstance(faces, dict):
        return faces["vertex_indices"]
    if len(faces) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    key = "vertex_indices" if "vertex_indices" in faces[0] else "vertex_index"
    tris = []
    for k, row in enumerate(faces):
        idx = row[key]
        if len(idx) != 3:
            raise FormatError(f"{path}: face {k} has {len(idx)} vertices; only triangles are supported")
        tris.append(idx)
    return np.asarray(tris, dtype=np.int64)


def read_ply(path):
    """Vertices ``(J, 3)`` and triangles ``(T, 3)`` (``None`` without a face element)."""
    path = str(path)
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        _check_layout(elements, path)
        if fmt == "ascii":
            text = io.TextIOWrapper(fh, encoding="ascii", errors="replace")
            data = _read_ascii_body(text, elements, path, header_lines)
            verts = data["vertex"]
            points = np.array([[r["x"], r["y"], r["z"]] for r in verts], dtype=np.float64).reshape(-1, 3)
        else:
            offset = fh.tell()
            fh.seek(0)
            buf = fh.read()
            data = _read_binary_body(buf, offset, elements, path)
            v = data["vertex"]
            points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    tris = _faces_to_triangles(data["face"], path) if "face" in data else None
    return points, tris


def write_ply(path, points, triangles=None, binary=False, colors=None):
    """Write a PLY; ``colors`` is an optional ``(J, 3)`` uint8 array of per-vertex RGB."""
    points = np.asarray(points, dtype=np.float64)
    tris = None if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0"]
    header.append(f"element vertex {len(points)}")
    header += ["property double x", "property double y", "property double z"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(len(points), 3)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if tris is not None:
        header += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    def body(fh):
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if colors is not None:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rec = np.empty(len(points), dtype=fields)
            rec["x"], rec["y"], rec["z"] = points.T
            if colors is not None:
                rec["red"], rec["green"], rec["blue"] = colors.T
            fh.write(rec.tobytes())
            if tris is not None:
                frec = np.empty(len(tris), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                frec["n"] = 3
                frec["i"] = tris
                fh.write(frec.tobytes())
        else:
            out = []
            for k, p in enumerate(points.tolist()):
                line = f"{p[0]!r} {p[1]!r} {p[2]!r}"
                if colors is not None:
                    line += " {} {} {}".format(*colors[k])
                out.append(line)
            if tris is not None:
                out += [f"3 {a} {b} {c}" for a, b, c in tris]
            fh.write(("\n".join(out) + "\n").encode("ascii") if out else b"")

    _atomic_write(path, lambda fh: (fh.write(head), body(fh)), binary=True)


# ---------------------------------------------------------------- OBJ

def read_obj(path):
    """Vertices and triangles from ``v`` and ``f`` lines; other keywords are ignored."""
    path = str(path)
    points, tris = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            toks = raw.split()
            if not toks:
                continue
            if toks[0] == "v":
                try:
                    points.append([float(t) for t in toks[1:4]])
                except ValueError:
                    raise FormatError(f"{path}: line {lineno}: bad vertex") from None
                if len(points[-1]) != 3:
                    raise FormatError(f"{path}: line {lineno}: vertex needs 3 coordinates")
            elif toks[0] == "f":
                if len(toks) != 4:
                    raise FormatError(f"{path}: line {lineno}: only triangular faces are supported")
                face = []
                for t in toks[1:]:
                    try:
                        k = int(t.split("/")[0])
                    except ValueError:
                        raise FormatError(f"{path}: line {lineno}: bad face index {t!r}") from None
                    if k == 0:
                        raise FormatError(f"{path}: line {lineno}: face index 0 is invalid")
                    face.append(k - 1 if k > 0 else len(points) + k)
                tris.append(face)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts, (np.asarray(tris, dtype=np.int64).reshape(-1, 3) if tris else None)


def write_obj(path, points, triangles=None):
    lines = [f"v {p[0]!r} {p[1]!r} {p[2]!r}" for p in np.asarray(points, dtype=np.float64).tolist()]
    if triangles is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(triangles, dtype=np.int64)]
    text = "\n".join(lines) + "\n"
    _atomic_write(path, lambda fh: fh.write(text))


# ---------------------------------------------------------------- meshes

def read_mesh(path):
    """Dispatch on extension (``.ply`` or ``.obj``)."""
    ext = Path(path).suffix.lower()
    if ext == ".ply":
        return read_ply(path)
    if ext == ".obj":
        return read_obj(path)
    raise FormatError(f"{path}: unsupported extension {ext!r} (expected .ply or .obj)")


def write_mesh(path, points, triangles=None, binary=False):
    ext = Path(path).suffix.lower()
    if ext == ".ply":
        write_ply(path, points, triangles, binary=binary)
    elif ext == ".obj":
        write_obj(path, points, triangles)
    else:
        raise FormatError(f"{path}: unsupported extension {ext!r} (expected .ply or .obj)")


def load_registered_set(template_path, instance_paths) -> RegisteredSet:
    """Template mesh plus instance vertex sets corresponded by vertex order."""
    instance_paths = list(instance_paths)
    if not instance_paths:
        raise StructuralInputError("need at least one instance")
    pts, tris = read_mesh(template_path)
    if tris is None:
        raise FormatError(f"{template_path}: template has no faces")
    template = Mesh(pts, tris)
    inst = []
    for p in instance_paths:
        z, ztris = read_mesh(p)
        if len(z) != template.n_points:
            raise CorrespondenceError(
                f"{p} has {len(z)} vertices but template {template_path} has {template.n_points}"
            )
        if ztris is not None and not np.array_equal(ztris, template.triangles):
            log.warning("%s: triangles differ from the template's; ignoring them", p)
        inst.append(z)
    return RegisteredSet(template, np.stack(inst))


# ---------------------------------------------------------------- atomic writes

def _atomic_write(path, writer, binary=False):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8", "newline": "\n"})) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _write_json(path, obj):
    text = json.dumps(obj, indent=1, allow_nan=False) + "\n"
    _atomic_write(path, lambda fh: fh.write(text))


def _floats(a):
    return [float(v) for v in np.ravel(a)]


# ---------------------------------------------------------------- model JSON

def model_to_dict(model: ArticulatedModel, meta=None) -> dict:
    lab = model.labeling
    ts = model.transforms
    parts = []
    for p in range(1, lab.part_count + 1):
        members = lab.members(p)
        parts.append({
            "id": p,
            "vertex_indices": members.tolist(),
            "transforms": [
                {"quaternion": _floats(ts.quaternions[i, p - 1]), "translation": _floats(ts.translations[i, p - 1])}
                for i in range(ts.n_instances)
            ],
        })
    joints = [
        {
            "parts": list(j.parts),
            "position": _floats(j.position),
            "residual": float(j.residual),
            "gamma": float(j.gamma),
            "ambiguous": bool(j.ambiguous),
            "boundary_edges": int(j.boundary_edges),
        }
        for j in model.joints
    ]
    meta = dict(meta or {})
    meta.setdefault("template", None)
    meta.setdefault("instances", [])
    meta.setdefault("seed", None)
    meta["n_points"] = int(lab.labels.size)
    meta["n_instances"] = int(ts.n_instances)
    return {"parts": parts, "joints": joints, "params": dict(model.params), "meta": meta}


def model_from_dict(d) -> ArticulatedModel:
    try:
        parts = sorted(d["parts"], key=lambda p: p["id"])
        n_pts = d["meta"]["n_points"]
        n_inst = d["meta"]["n_instances"]
        labels = np.zeros(n_pts, dtype=np.int64)
        quats = np.zeros((n_inst, len(parts), 4))
        trans = np.zeros((n_inst, len(parts), 3))
        for k, part in enumerate(parts):
            if part["id"] != k + 1:
                raise FormatError(f"part ids must be 1..P, got {part['id']}")
            labels[np.asarray(part["vertex_indices"], dtype=np.int64)] = part["id"]
            for i, tf in enumerate(part["transforms"]):
                quats[i, k] = tf["quaternion"]
                trans[i, k] = tf["translation"]
        if (labels == 0).any():
            raise FormatError("some vertices belong to no part")
        joints = [
            Joint(tuple(j["parts"]), j["position"], j["residual"], j.get("gamma", 0.0), j.get("ambiguous", False), j.get("boundary_edges", 0))
            for j in d["joints"]
        ]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise FormatError(f"malformed model JSON: {exc!r}") from None
    return ArticulatedModel(
        labeling=PartLabeling(labels, len(parts)),
        transforms=TransformSet(quats, trans),
        adjacency=[(j.parts, j.boundary_edges) for j in joints],
        joints=joints,
        params=dict(d.get("params", {})),
    )


def write_model(path, model, meta=None):
    _write_json(path, model_to_dict(model, meta))


def read_model(path) -> ArticulatedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return model_from_dict(d)


# ---------------------------------------------------------------- ground truth

_GT_KEYS = {"parts", "joints", "boundary_vertices", "meta"}
_GT_PART_KEYS = {"id", "vertex_indices"}
_GT_JOINT_KEYS = {"parts", "position"}
_GT_META_KEYS = {"part_count", "n_poses", "topology", "noise_sigma", "seed", "resolution", "segment_length"}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise FormatError(f"{where}: unknown field(s) {sorted(extra)}")
    missing = allowed - set(obj) if where != "meta" else set()
    if missing:
        raise FormatError(f"{where}: missing field(s) {sorted(missing)}")


def truth_to_dict(truth, meta=None) -> dict:
    return {
        "parts": [{"id": p, "vertex_indices": truth.labeling.members(p).tolist()} for p in range(1, truth.labeling.part_count + 1)],
        "joints": [{"parts": [int(a) for a in pq], "position": _floats(pos)} for pq, pos in truth.joints],
        "boundary_vertices": [np.asarray(b).tolist() for b in truth.boundary_vertices],
        "meta": dict(meta or {}),
    }


def write_truth(path, truth, meta=None):
    _write_json(path, truth_to_dict(truth, meta))


def read_truth(path):
    """Ground-truth JSON as ``(labeling, joints, boundary_vertices, meta)``; unknown fields are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    _reject_unknown(d, _GT_KEYS, "ground truth")
    _reject_unknown(d["meta"], _GT_META_KEYS, "meta")
    parts = d["parts"]
    for k, p in enumerate(parts):
        _reject_unknown(p, _GT_PART_KEYS, f"parts[{k}]")
    for k, j in enumerate(d["joints"]):
        _reject_unknown(j, _GT_JOINT_KEYS, f"joints[{k}]")
    n = sum(len(p["vertex_indices"]) for p in parts)
    labels = np.zeros(n, dtype=np.int64)
    for p in parts:
        labels[np.asarray(p["vertex_indices"], dtype=np.int64)] = p["id"]
    if (labels == 0).any():
        raise FormatError(f"{path}: ground-truth parts do not cover every vertex")
    joints = [((int(j["parts"][0]), int(j["parts"][1])), np.asarray(j["position"], dtype=np.float64)) for j in d["joints"]]
    boundary = [np.asarray(b, dtype=np.int64) for b in d["boundary_vertices"]]
    return PartLabeling(labels, len(parts)), joints, boundary, d["meta"]


# ---------------------------------------------------------------- trace and colors

TRACE_COLUMNS = ("iteration", "delta", "objective", "part_count", "was_integral")


def write_trace(path, trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for it, delta, obj, count, integral in trace.rows():
        w.writerow([it, repr(float(delta)), repr(float(obj)), count, int(bool(integral))])
    text = buf.getvalue()
    _atomic_write(path, lambda fh: fh.write(text))


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (int(r["iteration"]), float(r["delta"]), float(r["objective"]), int(r["part_count"]), r["was_integral"] == "1")
        for r in rows
    ]


def part_colors(n_parts: int) -> np.ndarray:
    """Deterministic RGB table ``(n_parts, 3)`` uint8; hues step by the golden ratio."""
    golden = 0.6180339887498949
    out = np.empty((n_parts, 3), dtype=np.uint8)
    for p in range(n_parts):
        r, g, b = colorsys.hsv_to_rgb((p * golden) % 1.0, 0.65, 0.95)
        out[p] = np.round(np.array([r, g, b]) * 255)
    return out


def write_colored(path, mesh: Mesh, labeling: PartLabeling, points=None, binary=True):
    """Mesh with each vertex colored by its part."""
    colors = part_colors(labeling.part_count)[labeling.index]
    write_ply(path, mesh.points if points is None else points, mesh.triangles, binary=binary, colors=colors)


def export_model(out_dir, model: ArticulatedModel, trace=None, mesh: Mesh = None, meta=None, emit_colored=True, emit_trace=True):
    """Write ``model.json`` and, when asked, ``parts.ply`` and ``trace.csv`` into ``out_dir``.

    Returns the list of paths written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "model.json"]
    write_model(written[0], model, meta)
    if emit_colored and mesh is not None:
        written.append(out / "parts.ply")
        write_colored(written[-1], mesh, model.labeling)
    if emit_trace and trace is not None:
        written.append(out / "trace.csv")
        write_trace(written[-1], trace)
    return written
