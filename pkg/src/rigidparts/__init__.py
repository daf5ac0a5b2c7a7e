"""Rigid-part segmentation and joint skeletons from corresponded mesh sequences."""

from .em import EMConfig, EMTrace, initialize, m_step, run_em
from .errors import (
    AmbiguousJointError,
    CorrespondenceError,
    DegenerateFitError,
    FormatError,
    ParameterError,
    RigidPartsError,
    SolverFailure,
    StructuralInputError,
)
from .evaluation import EvalReport, evaluate
from .fileio import load_registered_set, read_mesh, read_model, write_mesh, write_model
from .labeling import ModelParams, e_step, enforce_hard_contiguity, objective
from .lp import LinearProgram, LPSolution, kt_round, solve_lp
from .mesh import Mesh, PartLabeling, RegisteredSet, mesh_resolution, subdivide_patches
from .rigid import RigidTransform, TransformSet, fit_rigid
from .skeleton import ArticulatedModel, Joint, build_skeleton, estimate_joint
from .synth import GroundTruth, SynthSpec, add_noise, generate

__version__ = "0.1.0"

__all__ = [
    "AmbiguousJointError",
    "ArticulatedModel",
    "CorrespondenceError",
    "DegenerateFitError",
    "EMConfig",
    "EMTrace",
    "EvalReport",
    "FormatError",
    "GroundTruth",
    "Joint",
    "LPSolution",
    "LinearProgram",
    "Mesh",
    "ModelParams",
    "ParameterError",
    "PartLabeling",
    "RegisteredSet",
    "RigidPartsError",
    "RigidTransform",
    "SolverFailure",
    "StructuralInputError",
    "SynthSpec",
    "TransformSet",
    "add_noise",
    "build_skeleton",
    "e_step",
    "enforce_hard_contiguity",
    "estimate_joint",
    "evaluate",
    "fit_rigid",
    "generate",
    "initialize",
    "kt_round",
    "load_registered_set",
    "m_step",
    "mesh_resolution",
    "objective",
    "read_mesh",
    "read_model",
    "run_em",
    "solve_lp",
    "subdivide_patches",
    "write_mesh",
    "write_model",
]
