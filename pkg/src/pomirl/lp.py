"""Sparse linear-program container and solvers.

Two interchangeable backends sit behind :func:`solve_lp`:

* ``bundled`` -- a self-contained revised simplex for bounded variables
  with a Bland's-rule fallback for anti-cycling. Intended for small to
  medium problems and for reproducibility without external dependencies.
* ``highs`` -- adapter to ``scipy.optimize.linprog`` for the large
  network-flow-like programs produced by the sequential solver.

Both return the same :class:`LpSolution` contract; Optimal solutions are
feasibility-checked to 1e-7 before being returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import NumericalFailure

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"


@dataclass
class LinearProgram:
    """LP over bounded variables with sparse rows.

    Constraints are (coefficients, relation, rhs) with coefficients a list
    of (variable, value) pairs and relation one of '=', '<=', '>='.
    """

    num_vars: int
    maximize: bool = True
    objective: dict = field(default_factory=dict)  # var -> coefficient
    bounds: list = field(default_factory=list)  # (lo, hi) per var
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        if not self.bounds:
            self.bounds = [(0.0, np.inf)] * self.num_vars

    def set_objective(self, var, coef):
        if not np.isfinite(coef):
            raise ValueError("objective coefficient must be finite")
        self.objective[var] = self.objective.get(var, 0.0) + coef

    def set_bounds(self, var, lo, hi):
        if lo > hi:
            raise ValueError(f"bounds crossed for variable {var}")
        self.bounds[var] = (lo, hi)

    def add_constraint(self, coeffs, relation, rhs):
        if relation not in ("=", "<=", ">="):
            raise ValueError(f"bad relation {relation!r}")
        for v, c in coeffs:
            if not 0 <= v < self.num_vars:
                raise ValueError(f"constraint references invalid variable {v}")
            if not np.isfinite(c):
                raise ValueError("constraint coefficient must be finite")
        self.constraints.append((list(coeffs), relation, float(rhs)))

    def objective_vector(self):
        c = np.zeros(self.num_vars)
        for v, coef in self.objective.items():
            c[v] = coef
        return c

    def residuals(self, x):
        """Signed violation per constraint (0 when satisfied)."""
        out = np.zeros(len(self.constraints))
        for i, (coeffs, rel, rhs) in enumerate(self.constraints):
            lhs = sum(c * x[v] for v, c in coeffs)
            if rel == "=":
                out[i] = lhs - rhs
            elif rel == "<=":
                out[i] = max(0.0, lhs - rhs)
            else:
                out[i] = max(0.0, rhs - lhs)
        return out

    def dump(self, path):
        """Write the program in CPLEX LP text format for external checks."""
        sense = "Maximize" if self.maximize else "Minimize"
        lines = [sense, " obj: " + _linexpr(self.objective.items())]
        lines.append("Subject To")
        for i, (coeffs, rel, rhs) in enumerate(self.constraints):
            op = {"=": "=", "<=": "<=", ">=": ">="}[rel]
            lines.append(f" c{i}: {_linexpr(coeffs)} {op} {rhs}")
        lines.append("Bounds")
        for v, (lo, hi) in enumerate(self.bounds):
            lo_s = "-inf" if lo == -np.inf else repr(lo)
            hi_s = "+inf" if hi == np.inf else repr(hi)
            lines.append(f" {lo_s} <= x{v} <= {hi_s}")
        lines.append("End")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _linexpr(pairs):
    terms = []
    for v, c in pairs:
        sign = "+" if c >= 0 else "-"
        terms.append(f"{sign} {abs(c)} x{v}")
    return " ".join(terms) if terms else "0 x0"


@dataclass
class LpSolution:
    status: str
    values: np.ndarray = None
    objective: float = np.nan


def solve_lp(lp, backend="bundled"):
    """Solve an LP; Optimal solutions are primal-feasible within 1e-7."""
    if backend == "highs":
        sol = _solve_highs(lp)
    elif backend == "bundled":
        sol = _solve_bundled(lp)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if sol.status == OPTIMAL:
        resid = np.abs(lp.residuals(sol.values)).max() if lp.constraints else 0.0
        if resid > FEAS_TOL:
            raise NumericalFailure(f"solution residual {resid:.3g} exceeds {FEAS_TOL}")
    return sol


def _solve_highs(lp):
    c = lp.objective_vector()
    sign = -1.0 if lp.maximize else 1.0
    rows_eq, rhs_eq, rows_ub, rhs_ub = [], [], [], []
    for coeffs, rel, rhs in lp.constraints:
        row = np.zeros(0)
        idx = [v for v, _ in coeffs]
        val = [cv for _, cv in coeffs]
        if rel == "=":
            rows_eq.append((idx, val))
            rhs_eq.append(rhs)
        elif rel == "<=":
            rows_ub.append((idx, [cv for cv in val]))
            rhs_ub.append(rhs)
        else:
            rows_ub.append((idx, [-cv for cv in val]))
            rhs_ub.append(-rhs)

    def build(rows):
        data, ri, ci = [], [], []
        for i, (idx, val) in enumerate(rows):
            ri.extend([i] * len(idx))
            ci.extend(idx)
            data.extend(val)
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), lp.num_vars))

    kwargs = dict(
        A_eq=build(rows_eq) if rows_eq else None,
        b_eq=np.array(rhs_eq) if rhs_eq else None,
        A_ub=build(rows_ub) if rows_ub else None,
        b_ub=np.array(rhs_ub) if rhs_ub else None,
        bounds=lp.bounds,
    )
    # dual simplex occasionally gives up on badly scaled penalty rows with
    # an "unknown" status; the interior-point variant usually gets through
    for method, options in (("highs", None),
                            ("highs", {"presolve": False}),
                            ("highs-ipm", None)):
        res = linprog(sign * c, method=method, options=options, **kwargs)
        if res.status == 0:
            return LpSolution(OPTIMAL, np.asarray(res.x), sign * res.fun)
        if res.status == 2:
            return LpSolution(INFEASIBLE)
        if res.status == 3:
            return LpSolution(UNBOUNDED)
    raise NumericalFailure(f"highs backend failed: {res.message}")


# ---------------------------------------------------------------------------
# Bundled revised simplex for bounded variables.

_MAX_ITERS = 20000
_BLAND_AFTER = 2000


def _solve_bundled(lp):
    n = lp.num_vars
    m = len(lp.constraints)
    # Equality form: append one slack per inequality.
    n_slack = sum(1 for _, rel, _ in lp.constraints if rel != "=")
    N = n + n_slack
    A = np.zeros((m, N))
    b = np.zeros(m)
    lo = np.empty(N)
    hi = np.empty(N)
    for j, (l, h) in enumerate(lp.bounds):
        lo[j], hi[j] = l, h
    k = n
    for i, (coeffs, rel, rhs) in enumerate(lp.constraints):
        for v, cv in coeffs:
            A[i, v] += cv
        b[i] = rhs
        if rel == "<=":
            A[i, k] = 1.0
            lo[k], hi[k] = 0.0, np.inf
            k += 1
        elif rel == ">=":
            A[i, k] = -1.0
            lo[k], hi[k] = 0.0, np.inf
            k += 1

    c = np.zeros(N)
    cv = lp.objective_vector()
    c[:n] = -cv if lp.maximize else cv  # minimize internally

    if m == 0:
        # no rows: each variable sits at whichever bound its cost prefers
        x = np.where(c[:n] < 0, hi[:n], np.where(c[:n] > 0, lo[:n], 0.0))
        x = np.where(np.isfinite(x), x, np.where(c[:n] == 0, 0.0, x))
        if not np.all(np.isfinite(x)):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, x, cv.dot(x))

    # Start every structural/slack variable at a finite bound (or 0).
    x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))

    # Phase 1: one artificial per row covering the residual.
    r = b - A.dot(x)
    A1 = np.hstack([A, np.diag(np.where(r >= 0, 1.0, -1.0))])
    lo1 = np.concatenate([lo, np.zeros(m)])
    hi1 = np.concatenate([hi, np.full(m, np.inf)])
    c1 = np.concatenate([np.zeros(N), np.ones(m)])
    x1 = np.concatenate([x, np.abs(r)])
    basis = list(range(N, N + m))
    at_upper = np.isfinite(hi1) & ~np.isfinite(lo1)
    status, x1, basis = _simplex(A1, b, c1, lo1, hi1, x1, basis, at_upper[:N + m])
    if status != OPTIMAL:
        raise NumericalFailure("phase 1 did not terminate")
    if c1.dot(x1) > 1e-7 * max(1.0, np.abs(b).max()):
        return LpSolution(INFEASIBLE)

    # Phase 2: pin artificials to zero and optimize the real objective.
    lo1[N:] = 0.0
    hi1[N:] = 0.0
    x1[N:] = 0.0
    c2 = np.concatenate([c, np.zeros(m)])
    at_upper[N:] = False  # artificials pinned at 0
    status, x2, basis = _simplex(A1, b, c2, lo1, hi1, x1, basis, at_upper)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED)
    if status != OPTIMAL:
        raise NumericalFailure("phase 2 did not terminate")
    xs = x2[:n]
    obj = cv.dot(xs)
    return LpSolution(OPTIMAL, xs.copy(), obj)


def _simplex(A, b, c, lo, hi, x, basis, at_upper):
    """Bounded-variable primal simplex, minimizing c.x subject to Ax=b.

    ``basis`` holds one basic variable per row; every nonbasic variable
    sits at a finite bound (tracked by ``at_upper``) or at 0 when free.
    """
    m, N = A.shape
    basis = list(basis)
    in_basis = np.zeros(N, dtype=bool)
    in_basis[basis] = True

    for it in range(_MAX_ITERS):
        B = A[:, basis]
        try:
            y = np.linalg.solve(B.T, c[basis])
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular basis")
        d = c - y.dot(A)  # reduced costs
        bland = it >= _BLAND_AFTER

        enter, direction = -1, 0.0
        best = -PIVOT_TOL
        for j in range(N):
            if in_basis[j] or lo[j] == hi[j]:
                continue
            # increasing from lower bound improves if d < 0,
            # decreasing from upper bound improves if d > 0
            if not at_upper[j] and d[j] < -PIVOT_TOL:
                score = d[j]
                step = 1.0
            elif at_upper[j] and d[j] > PIVOT_TOL:
                score = -d[j]
                step = -1.0
            elif not np.isfinite(lo[j]) and not at_upper[j] and d[j] > PIVOT_TOL:
                # free variable: may also improve by decreasing
                score = -d[j]
                step = -1.0
            else:
                continue
            if bland:
                enter, direction = j, step
                break
            if score < best:
                best, enter, direction = score, j, step
        if enter < 0:
            return OPTIMAL, x, basis

        w = np.linalg.solve(B, A[:, enter]) * direction
        # Max step before the entering variable hits its other bound.
        own_limit = hi[enter] - lo[enter] if np.isfinite(hi[enter]) and np.isfinite(lo[enter]) else np.inf
        t_max, leave, leave_to_upper = own_limit, -1, False
        for i in range(m):
            xi = x[basis[i]]
            if w[i] > PIVOT_TOL:
                limit = (xi - lo[basis[i]]) / w[i]
                if limit < t_max - PIVOT_TOL or (bland and leave >= 0 and abs(limit - t_max) <= PIVOT_TOL and basis[i] < basis[leave]):
                    t_max, leave, leave_to_upper = max(limit, 0.0), i, False
            elif w[i] < -PIVOT_TOL and np.isfinite(hi[basis[i]]):
                limit = (xi - hi[basis[i]]) / w[i]
                if limit < t_max - PIVOT_TOL or (bland and leave >= 0 and abs(limit - t_max) <= PIVOT_TOL and basis[i] < basis[leave]):
                    t_max, leave, leave_to_upper = max(limit, 0.0), i, True
        if not np.isfinite(t_max):
            return UNBOUNDED, x, basis

        # Apply the step.
        x[enter] += direction * t_max
        for i in range(m):
            x[basis[i]] -= w[i] * t_max
        if leave < 0:
            # bound flip: entering variable moved to its opposite bound
            at_upper[enter] = not at_upper[enter]
        else:
            out = basis[leave]
            x[out] = hi[out] if leave_to_upper else lo[out]
            at_upper[out] = leave_to_upper
            in_basis[out] = False
            basis[leave] = enter
            in_basis[enter] = True
    raise NumericalFailure("pivot limit exhausted")
