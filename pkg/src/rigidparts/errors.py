"""Exception hierarchy shared by every module."""


class RigidPartsError(Exception):
    """Base class for all package errors."""


class StructuralInputError(RigidPartsError, ValueError):
    """Malformed mesh, labeling or other structural input."""


class ParameterError(RigidPartsError, ValueError):
    """A numeric or categorical parameter is out of its allowed range."""


class DegenerateFitError(RigidPartsError):
    """Rigid fit is not unique (too few points, or collinear/coincident source).

    ``transform`` and ``residual`` hold a least-squares minimizer anyway, so
    callers that can live with a non-unique answer may use them.
    """

    def __init__(self, message, transform, residual):
        super().__init__(message)
        self.transform = transform
        self.residual = residual


class SolverFailure(RigidPartsError):
    """The LP solver gave up for numerical reasons (not infeasible/unbounded)."""


class AmbiguousJointError(RigidPartsError):
    """Joint position is undetermined: identical part motions and no regularizer."""


class CorrespondenceError(RigidPartsError):
    """Instance meshes cannot be put in index-wise correspondence with the template."""


class FormatError(RigidPartsError):
    """A mesh or JSON file could not be parsed."""
