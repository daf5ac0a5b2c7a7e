"""Hard EM over part labels and per-instance part transforms, with annealing."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, StructuralInputError
from .labeling import ModelParams, e_step, enforce_hard_contiguity, objective, split_components
from .mesh import Mesh, PartLabeling, RegisteredSet, mesh_resolution, subdivide_patches
from .rigid import TransformSet, cluster_features, fit_moments, local_transforms, quat_to_rotvec

log = logging.getLogger(__name__)

INIT_METHODS = ("patches", "transform-clustering")


@dataclass(frozen=True)
class EMConfig:
    initial_part_count: int = 10
    init_method: str = "patches"
    tau: float = 0.9
    # sigma = sigma_multiple * mesh resolution at the target anneal ratio
    sigma_multiple: float = 1.0
    delta_start_frac: float = 0.25
    delta_growth: float = 1.5
    max_iterations: int = 50
    epsilon: float = 1e-6
    seed: int = 0
    hop_radius: int = 2
    lp_method: str = "auto"

    def __post_init__(self):
        if self.initial_part_count < 1:
            raise ParameterError("initial_part_count must be >= 1")
        if self.init_method == "cluster":
            object.__setattr__(self, "init_method", "transform-clustering")
        if self.init_method not in INIT_METHODS:
            raise ParameterError(f"init_method must be one of {INIT_METHODS}, got {self.init_method!r}")
        if not 0.5 < self.tau < 1:
            raise ParameterError("tau must lie in (0.5, 1)")
        if not self.sigma_multiple > 0:
            raise ParameterError("sigma_multiple must be positive")
        if not 0 < self.delta_start_frac:
            raise ParameterError("delta_start_frac must be positive")
        if not self.delta_growth >= 1:
            raise ParameterError("delta_growth must be >= 1")
        if self.delta_start_frac < 1 and self.delta_growth == 1:
            raise ParameterError("delta_growth of 1 never reaches the target anneal ratio")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")

    def target_params(self, mesh: Mesh) -> ModelParams:
        sigma = self.sigma_multiple * mesh_resolution(mesh)
        return ModelParams(sigma * sigma, self.tau)


@dataclass
class IterationRecord:
    iteration: int
    delta: float
    sigma_sq: float
    objective_before: float
    objective_e_step: float
    objective_split: float
    objective: float
    part_count: int
    was_integral: bool
    kept_previous: bool
    part_sizes: list


@dataclass
class EMTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    def rows(self):
        """``(iteration, delta, objective, part_count, was_integral)`` per iteration."""
        return [(r.iteration, r.delta, r.objective, r.part_count, r.was_integral) for r in self.records]

    def monotonicity_violations(self, rel_slack=1e-9, split_rel=1e-12):
        """Descriptions of every place where the objective went down within one anneal ratio."""
        bad = []

        def drop(a, b, rel):
            return b < a - rel * max(1.0, abs(a))

        prev = None
        for r in self.records:
            if prev is not None and prev.delta == r.delta and drop(prev.objective, r.objective_before, rel_slack):
                bad.append(f"iteration {r.iteration}: start {r.objective_before!r} < previous end {prev.objective!r}")
            if drop(r.objective_before, r.objective_e_step, rel_slack):
                bad.append(f"iteration {r.iteration}: E-step {r.objective_e_step!r} < {r.objective_before!r}")
            if abs(r.objective_split - r.objective_e_step) > split_rel * max(1.0, abs(r.objective_e_step)):
                bad.append(f"iteration {r.iteration}: splitting changed {r.objective_e_step!r} -> {r.objective_split!r}")
            if drop(r.objective_split, r.objective, rel_slack):
                bad.append(f"iteration {r.iteration}: M-step {r.objective!r} < {r.objective_split!r}")
            prev = r
        return bad

    def to_dict(self):
        return {"converged": self.converged, "records": [asdict(r) for r in self.records]}


def _part_indicator(labeling: PartLabeling):
    n = labeling.labels.size
    return sp.csr_matrix(
        (np.ones(n), (labeling.index, np.arange(n))), shape=(labeling.part_count, n)
    )


def m_step(rset: RegisteredSet, labeling: PartLabeling) -> TransformSet:
    """Least-squares rigid transform of every part into every instance.

    Raises
    ------
    StructuralInputError
        A part has no vertices; compact the labeling first.
    """
    if labeling.labels.size != rset.n_points:
        raise StructuralInputError("labeling size does not match the registered set")
    sizes = labeling.part_sizes()
    if (sizes == 0).any():
        empty = (np.flatnonzero(sizes == 0) + 1).tolist()
        raise StructuralInputError(f"parts {empty} are empty")
    ind = _part_indicator(labeling)
    x = rset.template.points
    weight = sizes.astype(np.float64)
    src_sum = ind @ x
    qs, ts = [], []
    for z in rset.instances:
        outer = (x[:, :, None] * z[:, None, :]).reshape(-1, 9)
        cross = (ind @ outer).reshape(-1, 3, 3)
        q, t = fit_moments(weight, src_sum, ind @ z, cross)
        qs.append(q)
        ts.append(t)
    return TransformSet(np.stack(qs), np.stack(ts))


def data_term(rset: RegisteredSet, ts: TransformSet, labeling: PartLabeling) -> float:
    """Total squared residual ``sum_i sum_j ||z_ij - T_i,a_j(x_j)||^2``."""
    diff = rset.instances - ts.predict(rset.template.points, labeling.index)
    return float(np.einsum("nja,nja->", diff, diff))


def initialize(rset: RegisteredSet, mesh: Mesh, config: EMConfig):
    """Initial labeling and transforms, by surface patches or by clustering local motions."""
    k = min(config.initial_part_count, mesh.n_points)
    if config.init_method == "patches":
        labeling = subdivide_patches(mesh, k, seed=config.seed)
    else:
        q, t = local_transforms(rset, config.hop_radius)
        feats = np.concatenate([quat_to_rotvec(q), t], axis=2)  # (N, J, 6)
        feats = np.transpose(feats, (1, 0, 2)).reshape(mesh.n_points, -1)
        raw = PartLabeling(cluster_features(feats, k, seed=config.seed) + 1, k)
        labeling, _ = split_components(raw, mesh)
    return labeling, m_step(rset, labeling)


def _same_partition(a: PartLabeling, b: PartLabeling) -> bool:
    return a.compacted()[0] == b.compacted()[0]


def run_em(rset: RegisteredSet, mesh: Mesh, config: EMConfig = EMConfig(), init=None):
    """Alternate E- and M-steps while raising the anneal ratio to its target.

    The anneal ratio ``delta = sigma^2 / s`` starts at ``delta_start_frac`` of its
    target and grows by ``delta_growth`` per iteration by scaling ``sigma^2``
    (``tau`` stays fixed). Once at target, the loop stops when an iteration
    leaves the partition unchanged or moves the objective by less than
    ``epsilon`` relative.

    Parameters
    ----------
    init : (PartLabeling, TransformSet), optional
        Starting state; default is :func:`initialize`.

    Returns
    -------
    (PartLabeling, TransformSet, EMTrace)
    """
    if rset.template is not mesh and rset.n_points != mesh.n_points:
        raise StructuralInputError("mesh and registered set differ in vertex count")
    target = config.target_params(mesh)
    labeling, ts = init if init is not None else initialize(rset, mesh, config)
    frac = min(1.0, config.delta_start_frac)
    trace = EMTrace()
    for it in range(config.max_iterations):
        params = target.with_sigma_sq(frac * target.sigma_sq)
        before = objective(rset, ts, labeling, mesh, params)
        new, obj_e, integral = e_step(rset, ts, mesh, params, seed=config.seed + it, method=config.lp_method)
        kept = False
        if obj_e < before:
            # only possible after rounding a fractional relaxation: keep the current labels
            new, obj_e, kept = labeling, before, True
        split, ts_split = enforce_hard_contiguity(new, ts, mesh)
        obj_s = objective(rset, ts_split, split, mesh, params)
        ts_new = m_step(rset, split)
        obj_m = objective(rset, ts_new, split, mesh, params)
        trace.records.append(
            IterationRecord(
                iteration=it + 1,
                delta=params.delta,
                sigma_sq=params.sigma_sq,
                objective_before=before,
                objective_e_step=obj_e,
                objective_split=obj_s,
                objective=obj_m,
                part_count=split.part_count,
                was_integral=integral,
                kept_previous=kept,
                part_sizes=split.part_sizes().tolist(),
            )
        )
        log.info(
            "iter %d  delta=%.4g  parts=%d  objective=%.6f  integral=%s",
            it + 1, params.delta, split.part_count, obj_m, integral,
        )
        at_target = frac >= 1.0
        unchanged = _same_partition(split, labeling)
        small_change = abs(obj_m - before) < config.epsilon * max(1.0, abs(obj_m))
        labeling, ts = split, ts_new
        if at_target and (unchanged or small_change):
            trace.converged = True
            break
        if not at_target:
            frac = min(1.0, frac * config.delta_growth)
    return labeling, ts, trace
