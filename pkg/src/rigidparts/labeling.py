"""MAP part labeling for fixed transforms (the E-step) and the model objective.

The E-step is a uniform-labeling problem: per-vertex assignment costs from the
Gaussian residual model plus a penalty ``s = log(tau) - log(1 - tau)`` for every
mesh edge whose endpoints get different parts. It is solved through its LP
relaxation; integral LP optima are exact MAP labelings.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ParameterError, SolverFailure, StructuralInputError
from .lp import LinearProgram, kt_round, solve_lp
from .mesh import Mesh, PartLabeling, RegisteredSet, csr_from_edges
from .rigid import TransformSet

__all__ = [
    "ModelParams",
    "PartLabeling",
    "TransformSet",
    "build_labeling_lp",
    "cost_matrix",
    "e_step",
    "enforce_hard_contiguity",
    "objective",
    "singleton_cost",
]

INTEGRALITY_TOL = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Noise variance, edge-agreement probability and joint regularization weight.

    ``gamma=None`` lets the skeleton step pick its own weight.
    """

    sigma_sq: float
    tau: float = 0.9
    gamma: float = None

    def __post_init__(self):
        if not (self.sigma_sq > 0 and math.isfinite(self.sigma_sq)):
            raise ParameterError(f"sigma_sq must be positive and finite, got {self.sigma_sq}")
        if not 0.5 < self.tau < 1.0:
            raise ParameterError(f"tau must lie in (0.5, 1), got {self.tau}")
        if self.gamma is not None and not self.gamma >= 0:
            raise ParameterError(f"gamma must be nonnegative, got {self.gamma}")

    @property
    def separation(self) -> float:
        """Penalty ``s`` paid per separated edge."""
        return math.log(self.tau) - math.log1p(-self.tau)

    @property
    def delta(self) -> float:
        """Rigidity/contiguity tradeoff ``sigma_sq / s``."""
        return self.sigma_sq / self.separation

    def with_sigma_sq(self, sigma_sq) -> "ModelParams":
        return replace(self, sigma_sq=float(sigma_sq))


def residual_matrix(rset: RegisteredSet, ts: TransformSet) -> np.ndarray:
    """``sum_i ||z_ij - T_ip(x_j)||^2`` for every vertex ``j`` and part ``p``."""
    if ts.n_instances != rset.n_instances:
        raise StructuralInputError(
            f"transform set covers {ts.n_instances} instances, data has {rset.n_instances}"
        )
    return _kernels.residual_matrix(
        np.ascontiguousarray(rset.template.points),
        np.ascontiguousarray(rset.instances),
        np.ascontiguousarray(ts.rotations),
        np.ascontiguousarray(ts.translations),
    )


def cost_matrix(rset: RegisteredSet, ts: TransformSet, params: ModelParams) -> np.ndarray:
    """Log-costs ``c(j, p)``, shape ``(J, P)``; all entries are ``<= 0``."""
    return residual_matrix(rset, ts) / (-2.0 * params.sigma_sq)


def singleton_cost(rset: RegisteredSet, ts: TransformSet, vertex: int, part: int, params: ModelParams) -> float:
    """``c(j, p)`` for one vertex and one (1-based) part."""
    x = rset.template.points[vertex]
    total = 0.0
    for i in range(rset.n_instances):
        r = ts.rotations[i, part - 1]
        d = rset.instances[i, vertex] - (r @ x + ts.translations[i, part - 1])
        total += float(d @ d)
    return -total / (2.0 * params.sigma_sq)


def build_labeling_lp(costs, edges, separation: float) -> LinearProgram:
    """LP relaxation of the uniform-labeling integer program.

    Variables are ``alpha[j, p]`` (index ``j*P + p``) followed by
    ``beta[e, p]`` (index ``J*P + e*P + p``). The objective is
    ``sum c(j,p) alpha[j,p] - separation * sum_e 1/2 sum_p beta[e,p]``;
    rows are one equality ``sum_p alpha[j,p] = 1`` per vertex, then the two
    inequalities ``+-(alpha[j,p] - alpha[k,p]) - beta[e,p] <= 0`` per edge
    and part.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise StructuralInputError("costs must have shape (J, P)")
    if not separation > 0:
        raise ParameterError(f"separation weight must be positive, got {separation}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n_pts, n_parts = c.shape
    n_edges = len(edges)
    n_alpha = n_pts * n_parts
    n_vars = n_alpha + n_edges * n_parts

    objective = np.concatenate([c.ravel(), np.full(n_edges * n_parts, -0.5 * separation)])

    eq_rows = np.repeat(np.arange(n_pts), n_parts)
    eq_cols = np.arange(n_alpha)

    e_idx = np.repeat(np.arange(n_edges), n_parts)
    p_idx = np.tile(np.arange(n_parts), n_edges)
    aj = edges[e_idx, 0] * n_parts + p_idx
    ak = edges[e_idx, 1] * n_parts + p_idx
    beta = n_alpha + e_idx * n_parts + p_idx
    first = n_pts + 2 * np.arange(n_edges * n_parts)
    second = first + 1
    rows = np.concatenate([eq_rows, first, first, first, second, second, second])
    cols = np.concatenate([eq_cols, aj, ak, beta, ak, aj, beta])
    k = n_edges * n_parts
    vals = np.concatenate([np.ones(n_alpha), np.ones(k), -np.ones(k), -np.ones(k), np.ones(k), -np.ones(k), -np.ones(k)])
    n_rows = n_pts + 2 * k
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_vars))
    sense = np.concatenate([np.zeros(n_pts, dtype=np.int8), np.full(2 * k, -1, dtype=np.int8)])
    rhs = np.concatenate([np.ones(n_pts), np.zeros(2 * k)])
    return LinearProgram(objective, a, sense, rhs)


def solve_labeling(costs, edges, separation, seed=None, method="auto"):
    """Solve the relaxed labeling program.

    Returns ``(labels, fractional, was_integral, solution)`` with 1-based labels.
    """
    c = np.asarray(costs, dtype=np.float64)
    n_pts, n_parts = c.shape
    if n_parts == 1:
        frac = np.ones((n_pts, 1))
        return np.ones(n_pts, dtype=np.int64), frac, True, None
    lp = build_labeling_lp(c, edges, separation)
    sol = solve_lp(lp, method=method)
    if sol.status != "optimal":
        raise SolverFailure(f"labeling LP reported {sol.status}; it is always feasible and bounded")
    frac = sol.values[: n_pts * n_parts].reshape(n_pts, n_parts)
    integral = bool(np.all(np.minimum(np.abs(frac), np.abs(frac - 1.0)) <= INTEGRALITY_TOL))
    if integral:
        labels = np.argmax(frac, axis=1) + 1
    else:
        clean = np.clip(frac, 0.0, None)
        clean /= clean.sum(axis=1, keepdims=True)
        labels = kt_round(clean, edges, seed)
    return labels, frac, integral, sol


def objective(rset: RegisteredSet, ts: TransformSet, labeling: PartLabeling, mesh: Mesh, params: ModelParams) -> float:
    """Log-likelihood of labels and transforms, up to constants independent of both.

    ``sum_edges log phi(a_j, a_k) - 1/(2 sigma^2) sum_i sum_j ||z_ij - T_i,a_j(x_j)||^2``
    """
    lab = labeling.labels
    if lab.size != rset.n_points or labeling.part_count > ts.n_parts:
        raise StructuralInputError("labeling does not match the data or transform set")
    e = mesh.edges
    n_sep = int(np.count_nonzero(lab[e[:, 0]] != lab[e[:, 1]]))
    edge_term = (len(e) - n_sep) * math.log(params.tau) + n_sep * math.log1p(-params.tau)
    diff = rset.instances - ts.predict(rset.template.points, labeling.index)
    data = float(np.einsum("nja,nja->", diff, diff))
    return edge_term - data / (2.0 * params.sigma_sq)


def e_step(rset: RegisteredSet, ts: TransformSet, mesh: Mesh, params: ModelParams, seed=None, method="auto"):
    """MAP labeling for fixed transforms.

    Returns ``(labeling, objective_value, was_integral)``. When the relaxation is
    fractional the labels come from randomized rounding (``seed``), and the
    returned labeling is no longer guaranteed optimal.
    """
    costs = cost_matrix(rset, ts, params)
    labels, _, integral, _ = solve_labeling(costs, mesh.edges, params.separation, seed, method)
    labeling = PartLabeling(labels, ts.n_parts)
    return labeling, objective(rset, ts, labeling, mesh, params), integral


def split_components(labeling: PartLabeling, mesh: Mesh):
    """Relabel so that every part is one edge-connected component.

    Returns the new labeling (parts numbered by smallest member vertex) and,
    for each new part, the 0-based old part it came from.
    """
    lab = labeling.labels
    e = mesh.edges
    same = e[lab[e[:, 0]] == lab[e[:, 1]]]
    indptr, indices = csr_from_edges(mesh.n_points, same)
    comp = _kernels.component_labels(indptr, indices, np.ones(mesh.n_points, dtype=np.bool_))
    comp = np.asarray(comp)
    _, first = np.unique(comp, return_index=True)
    origin = labeling.index[first]
    return PartLabeling(comp + 1, first.size), origin


def enforce_hard_contiguity(labeling: PartLabeling, ts: TransformSet, mesh: Mesh):
    """Split disconnected parts into their components; new parts copy the transforms.

    Empty parts disappear and ids are compacted, so the result is canonical:
    parts are numbered in order of their smallest vertex. The model objective
    is unchanged.
    """
    new, origin = split_components(labeling, mesh)
    return new, ts.take_parts(origin)
