"""Rigid transforms, closed-form weighted rigid fitting and transform clustering."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import DegenerateFitError, ParameterError, StructuralInputError

# relative singular-value threshold below which a source set counts as collinear
_RANK_TOL = 1e-10


def canonical_quaternion(q):
    """Unit quaternion(s) ``(..., 4)`` in ``(w, x, y, z)`` order with canonical sign."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    flat = q.reshape(-1, 4)
    nz = np.abs(flat) > 0
    first = np.argmax(nz, axis=1)
    lead = flat[np.arange(len(flat)), first]
    flat = np.where((lead < 0)[:, None], -flat, flat)
    return flat.reshape(q.shape)


def quat_to_matrix(q):
    """Rotation matrices ``(..., 3, 3)`` of unit quaternions ``(..., 4)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = w * w + x * x - y * y - z * z
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = w * w - x * x + y * y - z * z
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = w * w - x * x - y * y + z * z
    return r


def quat_multiply(a, b):
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_rotvec(v):
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a, with its series near zero
    small = angle < 1e-8
    scale = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), v * scale], axis=-1)


def quat_to_rotvec(q):
    q = canonical_quaternion(q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    scale = np.where(small, 2.0 / np.maximum(q[..., :1], 1e-300), angle / np.where(small, 1.0, s))
    return vec * scale


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t`` with ``R`` given by a unit quaternion ``(w, x, y, z)``."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(q).all() and np.isfinite(t).all()) or not np.linalg.norm(q) > 0:
            raise ParameterError("transform needs a finite nonzero quaternion and finite translation")
        q = canonical_quaternion(q)
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(quat_from_rotvec(rotvec), translation)

    @classmethod
    def from_matrix(cls, m):
        """From a 4x4 homogeneous matrix (or a 3x3 rotation)."""
        m = np.asarray(m, dtype=np.float64)
        r = m[:3, :3]
        t = m[:3, 3] if m.shape == (4, 4) else np.zeros(3)
        # the quaternion is the top eigenvector of the same 4x4 form used by fit_rigid
        return cls(_top_quaternion(_horn_matrix(r.T)), t)

    @cached_property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __call__(self, x):
        return apply(self, x)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            quat_multiply(self.quaternion, other.quaternion),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        q = self.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q, -(self.rotation.T @ self.translation))

    def angle_to(self, other: "RigidTransform") -> float:
        """Rotation angle (radians) of ``self^-1 ∘ other``."""
        d = abs(float(np.dot(self.quaternion, other.quaternion)))
        return 2.0 * float(np.arccos(min(1.0, d)))

    def __repr__(self):
        q = np.array2string(self.quaternion, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"RigidTransform(q={q}, t={t})"


def apply(t: RigidTransform, x):
    """Apply ``t`` to one point ``(3,)`` or many ``(n, 3)``."""
    x = np.asarray(x, dtype=np.float64)
    return x @ t.rotation.T + t.translation


# ---------------------------------------------------------------------------
# closed-form quaternion fit


def _horn_matrix(s):
    """Symmetric 4x4 matrix whose top eigenvector is the optimal rotation.

    ``s[..., a, b]`` is the weighted cross-covariance ``sum w (x_a)(z_b)`` of
    centered source ``x`` and destination ``z``.
    """
    sxx, sxy, sxz = s[..., 0, 0], s[..., 0, 1], s[..., 0, 2]
    syx, syy, syz = s[..., 1, 0], s[..., 1, 1], s[..., 1, 2]
    szx, szy, szz = s[..., 2, 0], s[..., 2, 1], s[..., 2, 2]
    n = np.empty(s.shape[:-2] + (4, 4))
    n[..., 0, 0] = sxx + syy + szz
    n[..., 0, 1] = n[..., 1, 0] = syz - szy
    n[..., 0, 2] = n[..., 2, 0] = szx - sxz
    n[..., 0, 3] = n[..., 3, 0] = sxy - syx
    n[..., 1, 1] = sxx - syy - szz
    n[..., 1, 2] = n[..., 2, 1] = sxy + syx
    n[..., 1, 3] = n[..., 3, 1] = szx + sxz
    n[..., 2, 2] = -sxx + syy - szz
    n[..., 2, 3] = n[..., 3, 2] = syz + szy
    n[..., 3, 3] = -sxx - syy + szz
    return n


def _top_quaternion(n):
    n = np.asarray(n)
    _, vecs = np.linalg.eigh(n.reshape(-1, 4, 4))
    return canonical_quaternion(vecs[..., :, -1]).reshape(n.shape[:-2] + (4,))


def fit_moments(weight, src_sum, dst_sum, cross):
    """Batched fit from first and second moments.

    Parameters are, per batch entry, the total weight ``W``, the weighted sums
    ``sum w x`` and ``sum w z``, and the raw weighted cross moment
    ``sum w x z^T``. Returns quaternions ``(..., 4)`` and translations ``(..., 3)``.
    Entries with zero weight come back as the identity.
    """
    weight = np.asarray(weight, dtype=np.float64)
    safe = np.where(weight > 0, weight, 1.0)[..., None]
    cx = src_sum / safe
    cz = dst_sum / safe
    centered = cross - weight[..., None, None] * cx[..., :, None] * cz[..., None, :]
    q = _top_quaternion(_horn_matrix(centered))
    # no rotational information (empty, single or coincident source): identity
    flat = np.all(centered == 0, axis=(-2, -1)) | (weight <= 0)
    q = np.where(flat[..., None], np.array([1.0, 0, 0, 0]), q)
    t = cz - np.einsum("...ab,...b->...a", quat_to_matrix(q), cx)
    return q, t


def fit_rigid(src, dst, weights=None):
    """Weighted least-squares rigid transform taking ``src`` onto ``dst``.

    Rotation is the top eigenvector of the 4x4 quaternion form of the centered
    cross-covariance; translation maps the weighted source centroid onto the
    destination centroid.

    Returns
    -------
    (RigidTransform, float)
        The transform and ``sum w ||dst - T(src)||^2``.

    Raises
    ------
    DegenerateFitError
        Fewer than three positively weighted points, or a collinear/coincident
        source. The error still carries a minimizer of the objective.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise StructuralInputError(f"src {src.shape} and dst {dst.shape} differ in shape")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != len(src) or (w < 0).any() or not np.isfinite(w).all():
        raise ParameterError("weights must be finite, nonnegative and one per point")
    total = w.sum()
    if total > 0:
        q, t = fit_moments(total, w @ src, w @ dst, np.einsum("n,na,nb->ab", w, src, dst))
    else:
        q, t = np.array([1.0, 0, 0, 0]), np.zeros(3)
    tf = RigidTransform(q, t)
    diff = dst - apply(tf, src)
    residual = float(w @ np.einsum("na,na->n", diff, diff))

    active = w > 0
    if active.sum() < 3:
        raise DegenerateFitError(f"only {int(active.sum())} positively weighted points", tf, residual)
    centered = (src[active] - (w[active] @ src[active]) / total) * np.sqrt(w[active])[:, None]
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] < _RANK_TOL * sv[0]:
        raise DegenerateFitError("source points are collinear or coincident", tf, residual)
    return tf, residual


# ---------------------------------------------------------------------------
# grid of transforms


class TransformSet:
    """``N x P`` grid of rigid transforms (instance ``i``, part ``p``), stored as arrays."""

    def __init__(self, quaternions, translations):
        q = canonical_quaternion(np.asarray(quaternions, dtype=np.float64))
        t = np.array(translations, dtype=np.float64)
        if q.ndim != 3 or q.shape[2] != 4 or t.shape != q.shape[:2] + (3,):
            raise StructuralInputError(
                f"expected quaternions (N, P, 4) and translations (N, P, 3), got {q.shape} and {t.shape}"
            )
        if not (np.isfinite(q).all() and np.isfinite(t).all()):
            raise StructuralInputError("non-finite transform entry")
        q.flags.writeable = False
        t.flags.writeable = False
        self.quaternions = q
        self.translations = t

    @classmethod
    def from_grid(cls, grid):
        """From nested lists ``grid[i][p]`` of :class:`RigidTransform`."""
        q = np.array([[tf.quaternion for tf in row] for row in grid])
        t = np.array([[tf.translation for tf in row] for row in grid])
        return cls(q, t)

    @classmethod
    def identity(cls, n_instances, n_parts):
        q = np.zeros((n_instances, n_parts, 4))
        q[..., 0] = 1.0
        return cls(q, np.zeros((n_instances, n_parts, 3)))

    @property
    def n_instances(self) -> int:
        return self.quaternions.shape[0]

    @property
    def n_parts(self) -> int:
        return self.quaternions.shape[1]

    @cached_property
    def rotations(self) -> np.ndarray:
        return quat_to_matrix(self.quaternions)

    def __getitem__(self, key) -> RigidTransform:
        i, p = key
        return RigidTransform(self.quaternions[i, p], self.translations[i, p])

    def take_parts(self, columns) -> "TransformSet":
        """Columns ``columns`` (0-based, repeats allowed), copied bit for bit."""
        columns = np.asarray(columns, dtype=np.int64)
        out = TransformSet.__new__(TransformSet)
        out.quaternions = self.quaternions[:, columns]
        out.translations = self.translations[:, columns]
        out.quaternions.flags.writeable = False
        out.translations.flags.writeable = False
        return out

    def predict(self, points, part_index) -> np.ndarray:
        """Predicted instance positions ``(N, J, 3)`` for 0-based per-point parts."""
        r = self.rotations[:, part_index]
        t = self.translations[:, part_index]
        return np.einsum("njab,jb->nja", r, points) + t

    def __repr__(self):
        return f"TransformSet(instances={self.n_instances}, parts={self.n_parts})"


# ---------------------------------------------------------------------------
# local transforms and their 6-D features


def _padded_neighborhoods(mesh, hop_radius):
    hoods = [mesh.neighborhood(j, hop_radius) for j in range(mesh.n_points)]
    width = max(len(h) for h in hoods)
    idx = np.zeros((len(hoods), width), dtype=np.int64)
    mask = np.zeros((len(hoods), width))
    for j, h in enumerate(hoods):
        idx[j, : len(h)] = h
        mask[j, : len(h)] = 1.0
    return idx, mask


def local_transform(rset, instance_index: int, vertex_index: int, hop_radius: int = 2) -> RigidTransform:
    """Rigid fit of a template hop-neighborhood onto its corresponded instance points."""
    if hop_radius < 1:
        raise ParameterError("hop_radius must be a positive integer")
    hood = rset.template.neighborhood(vertex_index, hop_radius)
    tf, _ = fit_rigid(rset.template.points[hood], rset.instances[instance_index][hood])
    return tf


def local_transforms(rset, hop_radius: int = 2):
    """All local transforms at once: quaternions ``(N, J, 4)``, translations ``(N, J, 3)``.

    Degenerate neighborhoods get the least-squares fallback instead of raising.
    """
    if hop_radius < 1:
        raise ParameterError("hop_radius must be a positive integer")
    idx, mask = _padded_neighborhoods(rset.template, hop_radius)
    x = rset.template.points[idx]
    weight = mask.sum(axis=1)
    src_sum = np.einsum("jk,jka->ja", mask, x)
    qs, ts = [], []
    for inst in rset.instances:
        z = inst[idx]
        cross = np.einsum("jk,jka,jkb->jab", mask, x, z)
        q, t = fit_moments(weight, src_sum, np.einsum("jk,jka->ja", mask, z), cross)
        qs.append(q)
        ts.append(t)
    return np.stack(qs), np.stack(ts)


def transform_feature(t: RigidTransform) -> np.ndarray:
    """Rotation vector (axis times angle) followed by translation."""
    return np.concatenate([quat_to_rotvec(t.quaternion), t.translation])


def transform_from_feature(v) -> RigidTransform:
    v = np.asarray(v, dtype=np.float64)
    return RigidTransform.from_rotvec(v[:3], v[3:6])


def cluster_features(features, k: int, seed=None, max_iter: int = 100) -> np.ndarray:
    """k-means labels (0-based) with k-means++ seeding.

    Clusters left empty by an assignment step are refilled with the point
    farthest from its center, taken from clusters that can spare one.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError("features must be a 2-D array")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        pick = rng.choice(n, p=d2 / total) if total > 0 else int(rng.integers(n))
        centers[c] = x[pick]
        np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1), out=d2)

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        new, dist = _kernels.nearest_center(x, np.ascontiguousarray(centers))
        new = np.array(new)
        dist = np.array(dist)
        for c in range(k):
            if (new == c).any():
                continue
            sizes = np.bincount(new, minlength=k)
            donors = sizes[new] > 1
            far = int(np.argmax(np.where(donors, dist, -1.0)))
            new[far] = c
            dist[far] = 0.0
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    return labels
