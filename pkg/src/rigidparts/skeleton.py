"""Joint positions between adjacent parts and assembly of the articulated model."""

from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguousJointError, ParameterError, StructuralInputError
from .mesh import Mesh, PartLabeling, RegisteredSet
from .rigid import TransformSet

# smallest/largest singular value ratio below which the hinge term is rank deficient
RANK_TOL = 1e-8
# automatic regularizer: this fraction of the hinge term's trace, relative to the centroid term's
AUTO_GAMMA_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class Joint:
    parts: tuple
    position: np.ndarray
    residual: float
    gamma: float = 0.0
    ambiguous: bool = False
    boundary_edges: int = 0

    def __post_init__(self):
        p, q = self.parts
        if p == q:
            raise StructuralInputError("a joint needs two distinct parts")
        object.__setattr__(self, "parts", (int(min(p, q)), int(max(p, q))))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))


@dataclass(frozen=True, eq=False)
class ArticulatedModel:
    labeling: PartLabeling
    transforms: TransformSet
    adjacency: list
    joints: list
    params: dict = field(default_factory=dict)

    @property
    def part_count(self) -> int:
        return self.labeling.part_count


def part_adjacency(labeling: PartLabeling, mesh: Mesh, min_boundary_edges: int = 1):
    """Adjacent part pairs with the mesh edges that cross between them.

    Returns ``[((p, q), cross_edges), ...]`` sorted by ``(p, q)`` with ``p < q``
    (1-based), keeping pairs joined by at least ``min_boundary_edges`` edges.
    """
    lab = labeling.labels
    e = mesh.edges
    a, b = lab[e[:, 0]], lab[e[:, 1]]
    cross = a != b
    if not cross.any():
        return []
    lo = np.minimum(a, b)[cross]
    hi = np.maximum(a, b)[cross]
    ce = e[cross]
    order = np.lexsort((hi, lo))
    lo, hi, ce = lo[order], hi[order], ce[order]
    keys = np.stack([lo, hi], axis=1)
    uniq, start, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    out = []
    for (p, q), s0, n in zip(uniq, start, counts):
        if n >= min_boundary_edges:
            out.append(((int(p), int(q)), ce[s0 : s0 + n]))
    return out


def boundary_centroids(rset: RegisteredSet, cross_edges) -> np.ndarray:
    """Per-instance mean of cross-edge midpoints, shape ``(N, 3)``."""
    ce = np.asarray(cross_edges, dtype=np.int64).reshape(-1, 2)
    if len(ce) == 0:
        raise StructuralInputError("no cross edges: parts are not adjacent")
    mid = 0.5 * (rset.instances[:, ce[:, 0]] + rset.instances[:, ce[:, 1]])
    return mid.mean(axis=1)


def joint_objective(y, p, q, ts: TransformSet, centroids, gamma) -> float:
    """Hinge disagreement plus ``gamma`` times distance of the joint's image to the centroids."""
    y = np.asarray(y, dtype=np.float64)
    a = np.einsum("nab,b->na", ts.rotations[:, p - 1], y) + ts.translations[:, p - 1]
    b = np.einsum("nab,b->na", ts.rotations[:, q - 1], y) + ts.translations[:, q - 1]
    hinge = float(np.sum((a - b) ** 2))
    if gamma == 0:
        return hinge
    return hinge + gamma * float(np.sum((0.5 * (a + b) - np.asarray(centroids)) ** 2))


def _normal_equations(p, q, ts, centroids):
    rp, rq = ts.rotations[:, p - 1], ts.rotations[:, q - 1]
    tp, tq = ts.translations[:, p - 1], ts.translations[:, q - 1]
    d = rp - rq
    e = tp - tq
    m = 0.5 * (rp + rq)
    f = 0.5 * (tp + tq) - centroids
    h1 = np.einsum("nba,nbc->ac", d, d)
    g1 = np.einsum("nba,nb->a", d, e)
    h2 = np.einsum("nba,nbc->ac", m, m)
    g2 = np.einsum("nba,nb->a", m, f)
    return h1, g1, h2, g2


def _template_centroid(p, q, ts, centroids):
    """Mean of the centroids pulled back into template space by both parts."""
    pulled = []
    for col in (p - 1, q - 1):
        r = ts.rotations[:, col]
        t = ts.translations[:, col]
        pulled.append(np.einsum("nba,nb->na", r, centroids - t))
    return np.mean(pulled, axis=(0, 1))


def auto_gamma(p, q, ts: TransformSet, centroids) -> float:
    h1, _, h2, _ = _normal_equations(p, q, ts, np.asarray(centroids, dtype=np.float64))
    t1 = float(np.trace(h1))
    if t1 <= 0:
        return 1.0
    return AUTO_GAMMA_FRACTION * t1 / float(np.trace(h2))


def estimate_joint(p: int, q: int, ts: TransformSet, centroids, gamma=None) -> Joint:
    """Template-space point that both parts map to the same place in every instance.

    Minimizes ``sum_i ||T_ip(y) - T_iq(y)||^2 + gamma sum_i ||(T_ip(y) + T_iq(y))/2 - c_i||^2``
    in closed form. With ``gamma = 0`` and a rank-deficient hinge term (e.g. a
    1-DOF hinge, where a whole line fits) the answer is the solution closest
    to the pulled-back mean centroid, and the joint is flagged ``ambiguous``.

    Raises
    ------
    AmbiguousJointError
        ``gamma = 0`` and both parts move identically in every instance.
    """
    c = np.asarray(centroids, dtype=np.float64).reshape(ts.n_instances, 3)
    if gamma is None:
        gamma = auto_gamma(p, q, ts, c)
    if not gamma >= 0:
        raise ParameterError(f"gamma must be nonnegative, got {gamma}")
    h1, g1, h2, g2 = _normal_equations(p, q, ts, c)
    u, sv, vt = np.linalg.svd(h1)
    deficient = sv[0] == 0 or sv[-1] < RANK_TOL * sv[0]
    if gamma > 0:
        h = h1 + gamma * h2
        y = np.linalg.lstsq(h, -(g1 + gamma * g2), rcond=None)[0]
    else:
        if sv[0] == 0:
            raise AmbiguousJointError(f"parts {p} and {q} move identically; joint is undetermined")
        keep = sv >= RANK_TOL * sv[0]
        y = vt[keep].T @ ((u[:, keep].T @ -g1) / sv[keep])
        null = vt[~keep]
        if null.size:
            anchor = _template_centroid(p, q, ts, c)
            y = y + null.T @ (null @ (anchor - y))
    return Joint(
        parts=(p, q),
        position=y,
        residual=joint_objective(y, p, q, ts, c, gamma),
        gamma=float(gamma),
        ambiguous=bool(deficient),
    )


def build_skeleton(rset: RegisteredSet, mesh: Mesh, labeling: PartLabeling, ts: TransformSet, params=None, min_boundary_edges: int = 1) -> ArticulatedModel:
    """Adjacency graph plus one joint per adjacent part pair."""
    if ts.n_parts < labeling.part_count:
        raise StructuralInputError("transform set has fewer parts than the labeling")
    gamma = getattr(params, "gamma", None)
    adjacency = part_adjacency(labeling, mesh, min_boundary_edges)
    joints = []
    for (p, q), ce in adjacency:
        joint = estimate_joint(p, q, ts, boundary_centroids(rset, ce), gamma)
        joints.append(
            Joint(joint.parts, joint.position, joint.residual, joint.gamma, joint.ambiguous, len(ce))
        )
    info = {}
    if params is not None:
        info = {"sigma_sq": params.sigma_sq, "tau": params.tau, "gamma": params.gamma}
    return ArticulatedModel(
        labeling=labeling,
        transforms=ts,
        adjacency=[(pair, len(ce)) for pair, ce in adjacency],
        joints=joints,
        params=info,
    )
