"""Dense numerical kernels used throughout the package.

Linear solves, numerical rank, a small Bland-rule simplex for feasibility
(and the linear subproblems of Frank-Wolfe), Euclidean projections and a
central finite-difference gradient.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

SINGULAR_PIVOT_RTOL = 1e-12
# Slater checks ask for this margin below each inequality.
SLATER_MARGIN = 1e-6


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class IterationLimitError(RuntimeError):
    """The simplex method hit its pivot cap before reaching a verdict."""


def solve_linear(a, rhs, check_finite=True):
    """Solve ``a @ x = rhs`` by LU factorisation with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot is smaller than
    ``1e-12`` times the scale of its (permuted) row.
    """
    a = np.asarray(a, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if rhs.shape[0] != a.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {a.shape[0]}")
    with warnings.catch_warnings():
        # exact singularity is reported below as SingularMatrixError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=check_finite)
    perm = np.arange(a.shape[0])
    for i, p in enumerate(piv):
        perm[i], perm[p] = perm[p], perm[i]
    row_scale = np.abs(a[perm]).max(axis=1)
    pivots = np.abs(np.diag(lu))
    bad = np.nonzero(pivots < SINGULAR_PIVOT_RTOL * np.maximum(row_scale, np.finfo(float).tiny))[0]
    if bad.size:
        raise SingularMatrixError(f"matrix is numerically singular (pivot {bad[0]})")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def default_rank_tol(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return 1e-9 * np.abs(a).max() * max(a.shape)


def matrix_rank(a, tol=None):
    """Number of pivots found by row reduction with partial pivoting.

    A column whose best remaining pivot is at most ``tol`` is skipped.
    """
    m = np.array(a, dtype=float, copy=True)
    if m.ndim != 2:
        raise ValueError("matrix_rank expects a 2-D array")
    if m.size == 0:
        return 0
    if tol is None:
        tol = default_rank_tol(m)
    rows, cols = m.shape
    rank = 0
    for j in range(cols):
        if rank == rows:
            break
        col = np.abs(m[rank:, j])
        p = rank + int(np.argmax(col))
        if col[p - rank] <= tol:
            continue
        if p != rank:
            m[[rank, p]] = m[[p, rank]]
        below = m[rank + 1:, j] / m[rank, j]
        m[rank + 1:, j:] -= np.outer(below, m[rank, j:])
        rank += 1
    return rank


def project_nonneg(x):
    x = np.asarray(x, dtype=float)
    # adding 0.0 turns -0.0 into +0.0
    return np.maximum(x, 0.0) + 0.0


def project_l1_ball(w, radius=1.0):
    """Euclidean projection onto ``{v : ||v||_1 <= radius}``.

    Sort-and-threshold, O(d log d).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    if a.sum() <= radius:
        return w.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(w) * np.maximum(a - theta, 0.0)


def project_l2_ball(w, radius=1.0):
    if radius <= 0:
        raise ValueError("radius must be positive")
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if norm <= radius:
        return w.copy()
    return w * (radius / norm)


def finite_difference_gradient(fn, x, h=1e-6):
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Simplex


class LpStatus(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpFeasibilityProblem:
    """Equality system ``a_eq @ x = b_eq`` with per-variable lower bounds.

    ``lower_bounds[j]`` is ``0.0`` for a nonnegative variable and ``-inf``
    for a free one; ``None`` means all variables are nonnegative.
    """

    a_eq: np.ndarray
    b_eq: np.ndarray
    lower_bounds: np.ndarray | None = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        b = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise ValueError(f"a_eq has {a.shape[0]} rows but b_eq has {b.size} entries")
        lb = np.zeros(a.shape[1]) if self.lower_bounds is None else np.asarray(self.lower_bounds, dtype=float)
        if lb.shape != (a.shape[1],):
            raise ValueError("lower_bounds must have one entry per variable")
        if not np.all((lb == 0.0) | np.isneginf(lb)):
            raise ValueError("lower bounds must be 0 or -inf")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "a_eq", a)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "lower_bounds", lb)

    @property
    def shape(self):
        return self.a_eq.shape


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float | None = None
    pivots: int = 0
    residual: float = field(default=float("nan"))

    @property
    def feasible(self):
        return self.status in (LpStatus.FEASIBLE, LpStatus.OPTIMAL, LpStatus.UNBOUNDED)


_PIVOT_TOL = 1e-9
_COST_TOL = 1e-10
_FEAS_TOL = 1e-9


class _Tableau:
    """Dense simplex tableau; the last row holds reduced costs, last column the rhs."""

    def __init__(self, a, b, max_pivots):
        p, q = a.shape
        self.p, self.q = p, q
        t = np.zeros((p + 1, q + p + 1))
        t[:p, :q] = a
        t[:p, q:q + p] = np.eye(p)
        t[:p, -1] = b
        self.t = t
        self.basis = np.arange(q, q + p)
        self.pivots = 0
        self.max_pivots = max_pivots

    def _pivot(self, r, j):
        t = self.t
        t[r] /= t[r, j]
        col = t[:, j].copy()
        col[r] = 0.0
        t -= np.outer(col, t[r])
        self.basis[r] = j
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise IterationLimitError(f"simplex exceeded {self.max_pivots} pivots")

    def run(self, allowed, stop=None):
        """Bland-rule iterations minimising the cost row; returns False if unbounded.

        With ``stop`` set, iteration ends once the objective value drops to it.
        """
        t = self.t
        while True:
            if stop is not None and -t[-1, -1] <= stop:
                return True
            costs = t[-1, :-1]
            candidates = np.nonzero((costs < -_COST_TOL) & allowed)[0]
            if candidates.size == 0:
                return True
            j = candidates[0]
            col = t[:-1, j]
            rows = np.nonzero(col > _PIVOT_TOL)[0]
            if rows.size == 0:
                return False
            ratios = t[rows, -1] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = tied[np.argmin(self.basis[tied])]
            self._pivot(r, j)


def _standard_form(problem):
    a, b, lb = problem.a_eq, problem.b_eq, problem.lower_bounds
    free = np.isneginf(lb)
    a_std = np.hstack([a, -a[:, free]]) if free.any() else a.copy()
    return a_std, b.copy(), free


def _recover(y, free, q):
    x = y[:q].copy()
    if free.any():
        x[free] -= y[q:]
    return x


def _basic_solution(a_std, b, basis, q_std):
    """Re-solve for the basic variables from the original data to shed tableau drift."""
    cols = basis[basis < q_std]
    y = np.zeros(q_std)
    if cols.size:
        sol, *_ = np.linalg.lstsq(a_std[:, cols], b, rcond=None)
        y[cols] = np.maximum(sol, 0.0)
    return y


def _phase_one(a_std, b, max_pivots, stop=None):
    sign = np.where(b < 0, -1.0, 1.0)
    a1 = a_std * sign[:, None]
    b1 = b * sign
    tab = _Tableau(a1, b1, max_pivots)
    p, q = a1.shape
    tab.t[-1, :q] = -a1.sum(axis=0)
    tab.t[-1, -1] = -b1.sum()
    allowed = np.ones(q + p, dtype=bool)
    tab.run(allowed, stop)
    infeas = -tab.t[-1, -1]
    return tab, infeas, a1, b1


def _default_cap(p, q):
    return 10 * (p + q) ** 2


def lp_feasible(problem, max_pivots=None, tol=None):
    """Phase-1 simplex with Bland's rule.

    Free variables are projected out first: with ``A_f = U S V^T`` the
    nonnegative part must satisfy ``U_2^T (A_n y - b) = 0`` where ``U_2``
    spans the orthogonal complement of ``range(A_f)``; the free part is then
    recovered by least squares. Returns an :class:`LpResult` whose ``x`` is a
    witness point when the system is feasible. ``tol`` bounds the phase-1
    infeasibility (sum of artificial variables) relative to ``1 + max|b|``;
    default ``1e-9``. Raises :class:`IterationLimitError` past the pivot cap
    (default ``10 * (p + q)**2``).
    """
    p, q = problem.shape
    tol = _FEAS_TOL if tol is None else tol
    if p == 0:
        return LpResult(LpStatus.FEASIBLE, np.zeros(q), residual=0.0)
    a, b = problem.a_eq, problem.b_eq
    free = np.isneginf(problem.lower_bounds)
    a_n = a[:, ~free]
    scale = 1.0 + np.abs(b).max()
    if free.any():
        a_f = a[:, free]
        u, sv, _ = np.linalg.svd(a_f)
        rank = int((sv > default_rank_tol(a_f)).sum())
        comp = u[:, rank:]
        a_red, b_red = comp.T @ a_n, comp.T @ b
    else:
        a_red, b_red = a_n, b
    pivots = 0
    y = np.zeros(a_n.shape[1])
    if a_red.shape[0] and a_red.shape[1]:
        if max_pivots is None:
            max_pivots = _default_cap(*a_red.shape)
        tab, infeas, _, _ = _phase_one(a_red, b_red.copy(), max_pivots, stop=0.1 * tol * scale)
        pivots = tab.pivots
        if infeas > tol * scale:
            return LpResult(LpStatus.INFEASIBLE, pivots=pivots)
        y = _basic_solution(a_red, b_red, tab.basis, a_red.shape[1])
    elif a_red.shape[0] and np.abs(b_red).sum() > tol * scale:
        return LpResult(LpStatus.INFEASIBLE)

    def assemble(y):
        x = np.zeros(q)
        x[~free] = y
        if free.any():
            x[free], *_ = np.linalg.lstsq(a[:, free], b - a_n @ y, rcond=None)
        return x, float(np.abs(a @ x - b).max())

    x, residual = assemble(y)
    if residual > max(tol, 1e-8) * scale and a_red.shape[0] and a_red.shape[1]:
        # the clean basic solution disagrees with phase 1; fall back to the
        # tableau values, which satisfy the system up to accumulated error
        y = np.zeros(a_red.shape[1])
        inb = tab.basis < a_red.shape[1]
        y[tab.basis[inb]] = np.maximum(tab.t[:-1, -1][inb], 0.0)
        x, residual = assemble(y)
    return LpResult(LpStatus.FEASIBLE, x, pivots=pivots, residual=residual)


def lp_maximize(c, problem, max_pivots=None):
    """Maximise ``c @ x`` over the feasible set of ``problem`` (two-phase simplex).

    Only needed for the linear subproblems of Frank-Wolfe, which are always
    bounded; unboundedness is still detected and reported.
    """
    c = np.asarray(c, dtype=float)
    p, q = problem.shape
    if max_pivots is None:
        max_pivots = _default_cap(p, q)
    a_std, b, free = _standard_form(problem)
    q_std = a_std.shape[1]
    c_std = np.concatenate([c, -c[free]]) if free.any() else c.copy()
    if p == 0:
        if np.any(c_std > _COST_TOL):
            return LpResult(LpStatus.UNBOUNDED)
        return LpResult(LpStatus.OPTIMAL, np.zeros(q), objective=0.0, residual=0.0)
    tab, infeas, _, _ = _phase_one(a_std, b, max_pivots)
    if infeas > _FEAS_TOL * (1.0 + np.abs(b).max()):
        return LpResult(LpStatus.INFEASIBLE, pivots=tab.pivots)
    t = tab.t
    # drive zero-level artificials out of the basis where possible
    for r in range(p):
        if tab.basis[r] >= q_std:
            row = np.abs(t[r, :q_std])
            j = int(np.argmax(row))
            if row[j] > 1e-9:
                tab._pivot(r, j)
    keep = tab.basis < q_std
    tab.t = np.vstack([t[:-1][keep], t[-1:]])
    tab.basis = tab.basis[keep]
    t = tab.t
    # phase-2 cost row for minimising -c
    t[-1, :] = 0.0
    t[-1, :q_std] = -c_std
    for r, j in enumerate(tab.basis):
        t[-1] -= t[-1, j] * t[r]
    allowed = np.zeros(t.shape[1] - 1, dtype=bool)
    allowed[:q_std] = True
    if not tab.run(allowed):
        return LpResult(LpStatus.UNBOUNDED, pivots=tab.pivots)
    y = np.zeros(q_std)
    y[tab.basis] = np.maximum(t[:-1, -1], 0.0)
    x = _recover(y, free, q)
    residual = float(np.abs(problem.a_eq @ x - problem.b_eq).max())
    return LpResult(LpStatus.OPTIMAL, x, objective=float(c @ x), pivots=tab.pivots, residual=residual)
