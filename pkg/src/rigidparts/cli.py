"""Command-line entry point: ``fit``, ``synth`` and ``eval`` subcommands.

Exit status: 0 success, 1 usage error, 2 bad input, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .em import EMConfig, run_em
from .errors import (
    AmbiguousJointError,
    CorrespondenceError,
    DegenerateFitError,
    FormatError,
    ParameterError,
    SolverFailure,
    StructuralInputError,
)
from .evaluation import band_mask, evaluate
from .fileio import export_model, load_registered_set, read_mesh, read_model, read_truth, write_colored, write_mesh, write_truth
from .mesh import Mesh, mesh_resolution
from .skeleton import build_skeleton
from .synth import SynthSpec, add_noise, generate

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

INPUT_ERRORS = (FormatError, CorrespondenceError, StructuralInputError, ParameterError, OSError)
NUMERIC_ERRORS = (SolverFailure, AmbiguousJointError, DegenerateFitError)

log = logging.getLogger("rigidparts")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="rigidparts", description="Recover rigid parts and a joint skeleton from corresponded meshes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each EM iteration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="segment a registered mesh set and estimate joints")
    fit.add_argument("--template", required=True, help="template mesh (.ply or .obj)")
    fit.add_argument("--instances", required=True, nargs="+", help="instance meshes, corresponded by vertex order")
    fit.add_argument("--parts", type=int, default=10, help="initial part count")
    fit.add_argument("--init", choices=("patches", "cluster"), default="patches")
    fit.add_argument("--tau", type=float, default=0.9)
    fit.add_argument("--sigma-mult", type=float, default=1.0, help="sigma as a multiple of mesh resolution")
    fit.add_argument("--delta-start-frac", type=float, default=0.25)
    fit.add_argument("--delta-growth", type=float, default=1.5)
    fit.add_argument("--gamma", type=float, default=None, help="joint regularizer (default: automatic)")
    fit.add_argument("--max-iters", type=int, default=50)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--lp-method", choices=("auto", "simplex", "highs"), default="auto")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--emit-colored", action=argparse.BooleanOptionalAction, default=True,
                     help="write part-colored template and instance meshes")
    fit.add_argument("--emit-trace", action=argparse.BooleanOptionalAction, default=True,
                     help="write the per-iteration trace CSV")

    syn = sub.add_parser("synth", help="generate a synthetic articulated fixture with ground truth")
    syn.add_argument("--parts", type=int, default=3)
    syn.add_argument("--poses", type=int, default=5)
    syn.add_argument("--noise", type=float, default=0.0, help="noise sigma as a multiple of mesh resolution")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--topology", choices=("chain", "star"), default="chain")
    syn.add_argument("--vertices-per-segment", type=int, default=500)
    syn.add_argument("--global-motion", action="store_true")
    syn.add_argument("--format", choices=("ply", "obj"), default="ply")
    syn.add_argument("--binary", action="store_true", help="binary little-endian PLY")
    syn.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="score a model JSON against ground truth")
    ev.add_argument("--model", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--template", required=True, help="template mesh, used for the boundary band")
    ev.add_argument("--band-rings", type=int, default=1)
    ev.add_argument("--out", default=None, help="also write the report as JSON")
    return parser


def _fit(args):
    out = Path(args.out).resolve()
    for p in [args.template, *args.instances]:
        if Path(p).resolve() == out:
            raise ParameterError(f"input path {p} coincides with the output directory")
    config = EMConfig(
        initial_part_count=args.parts,
        init_method=args.init,
        tau=args.tau,
        sigma_multiple=args.sigma_mult,
        delta_start_frac=args.delta_start_frac,
        delta_growth=args.delta_growth,
        max_iterations=args.max_iters,
        seed=args.seed,
        lp_method=args.lp_method,
    )
    rset = load_registered_set(args.template, args.instances)
    mesh = rset.template
    labeling, ts, trace = run_em(rset, mesh, config)
    params = replace(config.target_params(mesh), gamma=args.gamma)
    model = build_skeleton(rset, mesh, labeling, ts, params)
    meta = {"template": str(args.template), "instances": [str(p) for p in args.instances], "seed": args.seed}
    written = export_model(out, model, trace, mesh, meta, emit_colored=args.emit_colored, emit_trace=args.emit_trace)
    if args.emit_colored:
        for i in range(rset.n_instances):
            written.append(out / f"parts_instance_{i:02d}.ply")
            write_colored(written[-1], mesh, labeling, points=rset.instances[i])
    print(f"{labeling.part_count} parts, {len(model.joints)} joints, {trace.iterations} iterations"
          f" ({'converged' if trace.converged else 'not converged'})")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(
        part_count=args.parts,
        topology=args.topology,
        n_poses=args.poses,
        vertices_per_segment=args.vertices_per_segment,
        global_motion=args.global_motion,
        seed=args.seed,
    )
    rset, truth = generate(spec)
    res = mesh_resolution(rset.template)
    if args.noise > 0:
        rset = add_noise(rset, args.noise * res, seed=args.seed + 1)
    ext = "." + args.format
    write_mesh(out / f"template{ext}", rset.template.points, rset.template.triangles, binary=args.binary)
    for i in range(rset.n_instances):
        write_mesh(out / f"instance_{i:02d}{ext}", rset.instances[i], rset.template.triangles, binary=args.binary)
    meta = {
        "part_count": spec.part_count,
        "n_poses": spec.n_poses,
        "topology": spec.topology,
        "noise_sigma": args.noise * res,
        "seed": spec.seed,
        "resolution": res,
        "segment_length": spec.segment_length,
    }
    write_truth(out / "ground_truth.json", truth, meta)
    print(f"wrote {rset.n_instances} instances of {rset.n_points} vertices to {out}")
    return EXIT_OK


def _eval(args):
    model = read_model(args.model)
    truth, joints, boundary, meta = read_truth(args.truth)
    pts, tris = read_mesh(args.template)
    mesh = Mesh(pts, tris)
    if truth.labels.size != mesh.n_points or model.labeling.labels.size != mesh.n_points:
        raise CorrespondenceError(f"{args.model}, {args.truth} and {args.template} disagree on vertex count")
    report = evaluate(model, truth, joints, band_mask(mesh, boundary, args.band_rings), meta.get("segment_length", 1.0))
    d = report.to_dict()
    print(json.dumps(d, indent=1))
    if args.out:
        Path(args.out).write_text(json.dumps(d, indent=1) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"fit": _fit, "synth": _synth, "eval": _eval}[args.command]
    try:
        return handler(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
