"""Scoring a recovered model against known parts and joints."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .mesh import PartLabeling

ACCURACY_THRESHOLD = 0.95
# joint tolerance in segment-length units
JOINT_THRESHOLD = 0.05


@dataclass
class EvalReport:
    accuracy: float
    scored_vertices: int
    part_count: int
    true_part_count: int
    joint_errors: list
    accuracy_ok: bool
    part_count_ok: bool
    joints_ok: bool

    @property
    def passed(self) -> bool:
        return self.accuracy_ok and self.part_count_ok and self.joints_ok

    def to_dict(self):
        d = asdict(self)
        d["joint_errors"] = [None if not np.isfinite(e) else float(e) for e in self.joint_errors]
        d["passed"] = self.passed
        return d


def match_parts(predicted: PartLabeling, truth: PartLabeling, mask=None):
    """Hungarian matching of predicted to true parts maximizing agreeing vertices.

    Returns ``(mapping, agree)`` where ``mapping[p_pred] = p_true`` (1-based, only
    matched parts) and ``agree`` is the number of matched vertices inside ``mask``.
    """
    keep = np.ones(predicted.labels.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    conf = np.zeros((predicted.part_count, truth.part_count), dtype=np.int64)
    np.add.at(conf, (predicted.index[keep], truth.index[keep]), 1)
    rows, cols = linear_sum_assignment(-conf)
    mapping = {int(r) + 1: int(c) + 1 for r, c in zip(rows, cols)}
    return mapping, int(conf[rows, cols].sum())


def label_accuracy(predicted: PartLabeling, truth: PartLabeling, mask=None) -> float:
    """Fraction of (masked) vertices whose matched part agrees with the truth."""
    keep = np.ones(predicted.labels.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        return 1.0
    _, agree = match_parts(predicted, truth, keep)
    return agree / n


def joint_errors(model, mapping, true_joints):
    """Distance from each true joint to the model joint between the matched parts (inf when absent)."""
    by_pair = {}
    for j in model.joints:
        a, b = mapping.get(j.parts[0]), mapping.get(j.parts[1])
        if a is not None and b is not None:
            by_pair[(min(a, b), max(a, b))] = j.position
    errs = []
    for (p, q), pos in true_joints:
        found = by_pair.get((min(p, q), max(p, q)))
        errs.append(float("inf") if found is None else float(np.linalg.norm(found - np.asarray(pos))))
    return errs


def evaluate(model, truth_labeling: PartLabeling, true_joints, band_mask, segment_length=1.0,
             accuracy_threshold=ACCURACY_THRESHOLD, joint_threshold=JOINT_THRESHOLD) -> EvalReport:
    """Accuracy outside ``band_mask``, part-count match and per-joint position error."""
    keep = ~np.asarray(band_mask, dtype=bool)
    acc = label_accuracy(model.labeling, truth_labeling, keep)
    mapping, _ = match_parts(model.labeling, truth_labeling, keep)
    errs = joint_errors(model, mapping, true_joints)
    return EvalReport(
        accuracy=acc,
        scored_vertices=int(keep.sum()),
        part_count=model.part_count,
        true_part_count=truth_labeling.part_count,
        joint_errors=errs,
        accuracy_ok=acc >= accuracy_threshold,
        part_count_ok=model.part_count == truth_labeling.part_count,
        joints_ok=all(e <= joint_threshold * segment_length for e in errs),
    )


def band_mask(mesh, boundary_vertices, rings=1) -> np.ndarray:
    """Vertices within ``rings`` hops of any listed boundary vertex."""
    mask = np.zeros(mesh.n_points, dtype=bool)
    for b in boundary_vertices:
        mask[np.asarray(b, dtype=np.int64)] = True
    e = mesh.edges
    for _ in range(rings):
        grow = mask.copy()
        grow[e[mask[e[:, 0]], 1]] = True
        grow[e[mask[e[:, 1]], 0]] = True
        mask = grow
    return mask
