"""Linear programs: a bounded revised simplex, a HiGHS backend, certification, rounding.

Every program is a maximization::

    max c.x   s.t.   A_i x (<=|=|>=) b_i,   lower <= x <= upper

Whichever backend produced a solution, :func:`certify` recomputes primal
feasibility and a weak-duality gap from the returned row duals, so the
optimality claim never rests on the backend alone.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ParameterError, SolverFailure, StructuralInputError

LE, EQ, GE = -1, 0, 1
_SENSE = {"<=": LE, "<": LE, "=": EQ, "==": EQ, ">=": GE, ">": GE, LE: LE, EQ: EQ, GE: GE}

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

DEFAULT_TOL = 1e-7
# dense simplex is used below this many entries in [A | I]
DENSE_LIMIT = 3_000_000


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=np.float64).ravel()
        a = sp.csr_matrix(self.A, dtype=np.float64)
        n = c.size
        if a.shape[1] != n:
            raise StructuralInputError(f"constraint rows have width {a.shape[1]}, objective has {n}")
        sense = np.array([_SENSE[s] for s in np.asarray(self.sense, dtype=object).ravel()], dtype=np.int8)
        rhs = np.asarray(self.rhs, dtype=np.float64).ravel()
        if sense.size != a.shape[0] or rhs.size != a.shape[0]:
            raise StructuralInputError("sense and rhs need one entry per constraint row")
        lo = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=np.float64).ravel()
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=np.float64).ravel()
        if lo.size != n or hi.size != n:
            raise StructuralInputError("bounds need one entry per variable")
        if not (np.isfinite(c).all() and np.isfinite(a.data).all() and np.isfinite(rhs).all()):
            raise StructuralInputError("non-finite objective or constraint coefficient")
        if not np.isfinite(lo).all() or np.isnan(hi).any() or (hi < lo).any():
            raise StructuralInputError("lower bounds must be finite and not exceed upper bounds")
        for name, val in (("objective", c), ("A", a), ("sense", sense), ("rhs", rhs), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_rows(cls, objective, rows, lower=None, upper=None):
        """Build from ``rows = [(coefficients, relation, bound), ...]``."""
        n = len(objective)
        if rows:
            a = np.array([r[0] for r in rows], dtype=np.float64).reshape(len(rows), n)
        else:
            a = np.zeros((0, n))
        return cls(objective, a, [r[1] for r in rows], [r[2] for r in rows], lower, upper)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass(frozen=True, eq=False)
class LPSolution:
    status: str
    values: np.ndarray
    objective_value: float
    duals: np.ndarray = None
    gap: float = np.nan
    primal_infeasibility: float = np.nan
    dual_infeasibility: float = np.nan
    iterations: int = 0
    method: str = ""
    info: dict = field(default_factory=dict)


def certify(lp: LinearProgram, x, y):
    """Primal infeasibility, dual infeasibility and duality gap of ``(x, y)``.

    ``y`` holds one dual per row with the maximization sign convention
    (``>= 0`` on ``<=`` rows, ``<= 0`` on ``>=`` rows). Duals of the wrong sign
    are clipped before the bound is formed, so the returned gap is an upper
    bound on suboptimality whenever the dual infeasibility is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).copy()
    ax = lp.A @ x
    viol = np.where(lp.sense == LE, ax - lp.rhs, np.where(lp.sense == GE, lp.rhs - ax, np.abs(ax - lp.rhs)))
    bound_viol = np.maximum(lp.lower - x, x - lp.upper)
    pinf = float(max(np.max(viol, initial=0.0), np.max(bound_viol, initial=0.0), 0.0))

    y[(lp.sense == LE) & (y < 0)] = 0.0
    y[(lp.sense == GE) & (y > 0)] = 0.0
    d = lp.objective - lp.A.T @ y
    up = d > 0
    # a positive reduced cost on an unbounded-above variable has no dual bound; score it
    # at the primal value and report it as dual infeasibility instead
    no_upper = up & ~np.isfinite(lp.upper)
    dinf = float(np.max(d[no_upper], initial=0.0))
    upper_or_x = np.where(np.isfinite(lp.upper), lp.upper, x)
    bound = float(lp.rhs @ y + np.sum(np.where(up, d * upper_or_x, d * lp.lower)))
    primal = float(lp.objective @ x)
    return pinf, dinf, bound - primal


# ---------------------------------------------------------------------------
# dense bounded revised simplex

_BASIC, _AT_LOWER, _AT_UPPER = 0, 1, 2


class _Simplex:
    """Dense revised simplex over ``[A | I | artificials]`` with bounded variables.

    Pricing is Dantzig (largest reduced cost); after a run of degenerate
    pivots it switches to Bland's rule until the objective moves again.
    """

    def __init__(self, a, b, lo, hi, tol, max_iter):
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.m = a.shape[0]
        self.a = a
        self.b = b
        self.lo = lo
        self.hi = hi

    def _refactor(self):
        bmat = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError as exc:
            raise SolverFailure("singular basis during refactorization") from exc
        nonbasic = self.state != _BASIC
        rhs = self.b - self.a[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.binv @ rhs

    def run(self, cost):
        """Iterate to optimality for ``cost``; returns ``"optimal"`` or ``"unbounded"``."""
        dtol = self.tol
        piv_tol = 1e-11
        degenerate_run = 0
        bland = False
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iter:
                raise SolverFailure(f"simplex exceeded {self.max_iter} iterations")
            y = self.binv.T @ cost[self.basis]
            d = cost - self.a.T @ y
            fixed = self.hi - self.lo <= 0
            eligible = ((self.state == _AT_LOWER) & (d > dtol)) | ((self.state == _AT_UPPER) & (d < -dtol))
            eligible &= ~fixed
            if not eligible.any():
                self.duals = y
                return OPTIMAL
            cand = np.flatnonzero(eligible)
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            sigma = 1.0 if self.state[j] == _AT_LOWER else -1.0
            w = self.binv @ self.a[:, j]
            delta = sigma * w
            xb = self.x[self.basis]
            lb = self.lo[self.basis]
            ub = self.hi[self.basis]
            limits = np.full(self.m, np.inf)
            dec = delta > piv_tol
            inc = delta < -piv_tol
            with np.errstate(invalid="ignore", divide="ignore"):
                limits[dec] = (xb[dec] - lb[dec]) / delta[dec]
                limits[inc] = (ub[inc] - xb[inc]) / -delta[inc]
            limits = np.maximum(limits, 0.0)
            limits[np.isnan(limits)] = np.inf
            flip = self.hi[j] - self.lo[j]
            step = min(float(limits.min(initial=np.inf)), flip)
            if not np.isfinite(step):
                return UNBOUNDED
            self.iterations += 1

            if flip <= step:
                self.x[self.basis] = xb - sigma * flip * w
                self.x[j] = self.hi[j] if sigma > 0 else self.lo[j]
                self.state[j] = _AT_UPPER if sigma > 0 else _AT_LOWER
            else:
                ties = np.flatnonzero(limits <= step + 1e-12 * max(1.0, step))
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(w[ties]))])
                leaving = self.basis[r]
                self.x[self.basis] = xb - sigma * step * w
                self.x[j] += sigma * step
                if delta[r] > 0:
                    self.x[leaving] = self.lo[leaving]
                    self.state[leaving] = _AT_LOWER
                else:
                    self.x[leaving] = self.hi[leaving]
                    self.state[leaving] = _AT_UPPER
                self.basis[r] = j
                self.state[j] = _BASIC
                piv = w[r]
                row = self.binv[r] / piv
                self.binv -= np.outer(w, row)
                self.binv[r] = row
                since_refactor += 1

            if step * abs(d[j]) <= 1e-12:
                degenerate_run += 1
                if degenerate_run > 30:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            if since_refactor >= 64:
                self._refactor()
                since_refactor = 0


def _solve_dense(lp: LinearProgram, tol, max_iter):
    a_struct = lp.A.toarray()
    m, n = a_struct.shape
    slack_lo = np.where(lp.sense == GE, -np.inf, 0.0)
    slack_hi = np.where(lp.sense == LE, np.inf, 0.0)
    x_struct = lp.lower.copy()
    resid = lp.rhs - a_struct @ x_struct
    slack_val = np.clip(resid, slack_lo, slack_hi)
    gap = resid - slack_val
    need_art = np.abs(gap) > 0
    art_rows = np.flatnonzero(need_art)
    k = art_rows.size

    a = np.zeros((m, n + m + k))
    a[:, :n] = a_struct
    a[:, n : n + m] = np.eye(m)
    a[art_rows, n + m + np.arange(k)] = np.sign(gap[art_rows])
    lo = np.concatenate([lp.lower, slack_lo, np.zeros(k)])
    hi = np.concatenate([lp.upper, slack_hi, np.full(k, np.inf)])

    s = _Simplex(a, lp.rhs, lo, hi, tol * 1e-2, max_iter)
    s.x = np.concatenate([x_struct, slack_val, np.abs(gap[art_rows])])
    s.state = np.full(n + m + k, _AT_LOWER, dtype=np.int8)
    s.state[n : n + m][slack_val == slack_hi] = _AT_UPPER
    s.state[n : n + m][(slack_val == 0) & (lp.sense == GE)] = _AT_UPPER
    basis = np.where(need_art, n + m + np.searchsorted(art_rows, np.arange(m)), n + np.arange(m))
    s.basis = basis.astype(np.int64)
    s.state[s.basis] = _BASIC
    s.binv = np.diag(1.0 / a[np.arange(m), s.basis]) if m else np.zeros((0, 0))

    scale = 1.0 + float(np.max(np.abs(lp.rhs), initial=0.0))
    if k:
        phase1 = np.zeros(n + m + k)
        phase1[n + m :] = -1.0
        s.run(phase1)
        s._refactor()
        if s.x[n + m :].sum() > tol * scale:
            return LPSolution(INFEASIBLE, s.x[:n].copy(), np.nan, iterations=s.iterations, method="simplex")
        # artificials stay in the program pinned at zero
        s.hi[n + m :] = 0.0
        s.x[n + m :] = np.where(s.state[n + m :] == _BASIC, s.x[n + m :], 0.0)
        s.state[n + m :][s.state[n + m :] != _BASIC] = _AT_LOWER
        s._refactor()

    cost = np.concatenate([lp.objective, np.zeros(m + k)])
    status = s.run(cost)
    s._refactor()
    x = s.x[:n].copy()
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, x, np.inf, iterations=s.iterations, method="simplex")
    y = s.binv.T @ cost[s.basis]
    return LPSolution(OPTIMAL, x, float(lp.objective @ x), duals=y, iterations=s.iterations, method="simplex")


def _solve_highs(lp: LinearProgram, tol):
    from scipy.optimize import linprog

    le = lp.sense == LE
    ge = lp.sense == GE
    eq = lp.sense == EQ
    ub_rows = np.flatnonzero(le | ge)
    sign = np.where(ge[ub_rows], -1.0, 1.0)
    a_ub = sp.diags(sign) @ lp.A[ub_rows] if ub_rows.size else None
    b_ub = sign * lp.rhs[ub_rows] if ub_rows.size else None
    eq_rows = np.flatnonzero(eq)
    a_eq = lp.A[eq_rows] if eq_rows.size else None
    b_eq = lp.rhs[eq_rows] if eq_rows.size else None
    bounds = np.column_stack([lp.lower, lp.upper])
    res = linprog(
        -lp.objective,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return LPSolution(INFEASIBLE, np.full(lp.n_vars, np.nan), np.nan, method="highs")
    if res.status == 3:
        return LPSolution(UNBOUNDED, np.full(lp.n_vars, np.nan), np.inf, method="highs")
    if res.status != 0:
        raise SolverFailure(f"HiGHS failed: {res.message}")
    y = np.zeros(lp.n_rows)
    if ub_rows.size:
        y[ub_rows] = -sign * res.ineqlin.marginals
    if eq_rows.size:
        y[eq_rows] = -res.eqlin.marginals
    x = np.asarray(res.x, dtype=np.float64)
    return LPSolution(OPTIMAL, x, float(lp.objective @ x), duals=y, iterations=int(res.nit), method="highs")


def solve_lp(lp: LinearProgram, tolerance: float = DEFAULT_TOL, method: str = "auto", max_iter=None) -> LPSolution:
    """Solve ``lp`` and certify the answer.

    Parameters
    ----------
    method : {"auto", "simplex", "highs"}
        ``"simplex"`` is the built-in dense revised simplex; ``"highs"`` hands
        the program to HiGHS's dual simplex. ``"auto"`` picks the built-in
        solver for small programs.

    Raises
    ------
    SolverFailure
        Iteration limit, singular basis, or a solution failing certification.
    """
    if method == "auto":
        method = "simplex" if lp.n_rows * (lp.n_vars + lp.n_rows) <= DENSE_LIMIT else "highs"
    if method == "simplex":
        if max_iter is None:
            max_iter = 50 * (lp.n_rows + lp.n_vars) + 1000
        sol = _solve_dense(lp, tolerance, max_iter)
    elif method == "highs":
        sol = _solve_highs(lp, tolerance)
    else:
        raise ParameterError(f"unknown LP method {method!r}")
    if sol.status != OPTIMAL:
        return sol
    pinf, dinf, gap = certify(lp, sol.values, sol.duals)
    scale = 1.0 + abs(sol.objective_value)
    if pinf > tolerance or dinf > tolerance or gap > tolerance * scale:
        raise SolverFailure(
            f"{sol.method} solution failed certification: primal infeasibility {pinf:.3g}, "
            f"dual infeasibility {dinf:.3g}, gap {gap:.3g}"
        )
    return LPSolution(
        OPTIMAL,
        sol.values,
        sol.objective_value,
        duals=sol.duals,
        gap=gap,
        primal_infeasibility=pinf,
        dual_infeasibility=dinf,
        iterations=sol.iterations,
        method=sol.method,
    )


# ---------------------------------------------------------------------------
# randomized rounding


def kt_round(fractional, edges=None, seed=None) -> np.ndarray:
    """Round per-vertex label distributions to integer labels (1-based).

    Each phase draws a label ``p`` uniformly and a threshold ``theta`` uniform on
    (0, 1]; every unassigned vertex with mass on ``p`` of at least ``theta``
    takes label ``p``. Phases repeat until all vertices are labeled. Vertex
    ``j`` ends up with label ``p`` with probability ``fractional[j, p]``.

    ``edges`` is accepted for API symmetry with the separation-cost helpers and
    does not influence the draw.
    """
    alpha = np.ascontiguousarray(fractional, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[1] < 1:
        raise ParameterError("fractional labeling must have shape (J, P)")
    if (alpha < -1e-9).any() or np.abs(alpha.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
        raise ParameterError("each row must be a distribution (nonnegative, summing to 1)")
    n, n_labels = alpha.shape
    labels = np.full(n, -1, dtype=np.int64)
    rng = np.random.default_rng(seed)
    block = 4 * n_labels + 16
    while (labels < 0).any():
        draw_label = rng.integers(n_labels, size=block)
        draw_theta = 1.0 - rng.random(block)
        _kernels.kt_phases(alpha, labels, draw_label, draw_theta)
    return labels + 1


def separation_cost(assignment, edges, weights=None) -> float:
    """Weighted count of separated edges.

    ``assignment`` is either 1-based integer labels ``(J,)`` or a fractional
    labeling ``(J, P)``, for which an edge costs half the L1 distance of its
    endpoint distributions.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
    arr = np.asarray(assignment)
    if arr.ndim == 1:
        sep = (arr[edges[:, 0]] != arr[edges[:, 1]]).astype(np.float64)
    else:
        sep = 0.5 * np.abs(arr[edges[:, 0]] - arr[edges[:, 1]]).sum(axis=1)
    return float(w @ sep)
