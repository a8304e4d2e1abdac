import itertools

import numpy as np
import pytest

from pomirl.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram,
                       solve_lp)


def brute_force_vertices(lp):
    """Enumerate basic feasible points of a bounded LP directly.

    Every optimum of a bounded LP lies at an intersection of n active
    constraints drawn from the inequality rows, the equality rows, and
    the variable bounds. Small and slow on purpose: this is the oracle.
    """
    n = lp.num_vars
    rows = []
    for coeffs, rel, rhs in lp.constraints:
        a = np.zeros(n)
        for v, c in coeffs:
            a[v] += c
        if rel in ("=", "<="):
            rows.append((a, rhs, rel == "="))
        if rel in ("=", ">="):
            rows.append((-a, -rhs, rel == "="))
    hyper = [(a, r) for a, r, _eq in rows]
    for v, (lob, hib) in enumerate(lp.bounds):
        e = np.zeros(n)
        e[v] = 1.0
        if np.isfinite(hib):
            hyper.append((e, hib))
        if np.isfinite(lob):
            hyper.append((-e, -lob))
    forced = [(a, r) for a, r, eq in rows if eq]

    best, best_x = -np.inf if lp.maximize else np.inf, None
    c = lp.objective_vector()
    m = len(hyper)
    for combo in itertools.combinations(range(m), n):
        A = np.array([hyper[i][0] for i in combo])
        b = np.array([hyper[i][1] for i in combo])
        if np.linalg.matrix_rank(A) < n:
            continue
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.abs(A.dot(x) - b).max() > 1e-8:
            continue
        ok = all(a.dot(x) <= r + 1e-8 for a, r in hyper)
        ok = ok and all(abs(a.dot(x) - r) <= 1e-8 for a, r in forced)
        if not ok:
            continue
        val = c.dot(x)
        if (lp.maximize and val > best) or (not lp.maximize and val < best):
            best, best_x = val, x
    return best, best_x


def random_lp(seed, n=3, m=3):
    rng = np.random.default_rng(seed)
    lp = LinearProgram(n, maximize=bool(rng.integers(2)))
    for v in range(n):
        lp.set_objective(v, float(rng.normal()))
        lp.set_bounds(v, 0.0, float(rng.uniform(0.5, 3.0)))
    for _ in range(m):
        coeffs = [(v, float(rng.normal())) for v in range(n)]
        rel = rng.choice(["<=", ">=", "="]) if rng.random() < 0.3 else "<="
        # keep the origin region feasible often enough to be interesting
        rhs = float(rng.uniform(-0.5, 2.0))
        lp.add_constraint(coeffs, str(rel), rhs)
    return lp


@pytest.mark.parametrize("backend", ["bundled", "highs"])
def test_known_optimum(backend):
    # max x0 + 2 x1 s.t. x0 + x1 <= 4, x1 <= 3, x in [0, 10]^2
    # optimum at (1, 3) with value 7
    lp = LinearProgram(2)
    lp.set_objective(0, 1.0)
    lp.set_objective(1, 2.0)
    lp.set_bounds(0, 0.0, 10.0)
    lp.set_bounds(1, 0.0, 10.0)
    lp.add_constraint([(0, 1.0), (1, 1.0)], "<=", 4.0)
    lp.add_constraint([(1, 1.0)], "<=", 3.0)
    sol = solve_lp(lp, backend=backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(7.0, abs=1e-9)
    assert sol.values == pytest.approx([1.0, 3.0], abs=1e-8)


@pytest.mark.parametrize("backend", ["bundled", "highs"])
def test_equality_and_lower_bounds(backend):
    # min 2 x0 + x1 s.t. x0 + x1 = 3, x0 >= 1 -> x = (1, 2), value 4
    lp = LinearProgram(2, maximize=False)
    lp.set_objective(0, 2.0)
    lp.set_objective(1, 1.0)
    lp.set_bounds(0, 1.0, np.inf)
    lp.add_constraint([(0, 1.0), (1, 1.0)], "=", 3.0)
    sol = solve_lp(lp, backend=backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(4.0, abs=1e-9)


@pytest.mark.parametrize("backend", ["bundled", "highs"])
def test_infeasible(backend):
    lp = LinearProgram(1)
    lp.set_bounds(0, 0.0, 1.0)
    lp.add_constraint([(0, 1.0)], ">=", 2.0)
    assert solve_lp(lp, backend=backend).status == INFEASIBLE


@pytest.mark.parametrize("backend", ["bundled", "highs"])
def test_unbounded(backend):
    lp = LinearProgram(1)
    lp.set_objective(0, 1.0)
    assert solve_lp(lp, backend=backend).status == UNBOUNDED


def test_free_variable():
    # min x0 with x0 free and x0 >= -5 via a constraint row
    lp = LinearProgram(1, maximize=False)
    lp.set_objective(0, 1.0)
    lp.set_bounds(0, -np.inf, np.inf)
    lp.add_constraint([(0, 1.0)], ">=", -5.0)
    sol = solve_lp(lp)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-5.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(40))
def test_matches_vertex_enumeration(seed):
    lp = random_lp(seed)
    oracle, _x = brute_force_vertices(lp)
    sol = solve_lp(lp, backend="bundled")
    if not np.isfinite(oracle):
        assert sol.status == INFEASIBLE
    else:
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(oracle, abs=1e-6)
        assert np.abs(lp.residuals(sol.values)).max() <= 1e-7


@pytest.mark.parametrize("seed", range(0, 40, 7))
def test_backends_agree(seed):
    lp = random_lp(seed)
    a = solve_lp(lp, backend="bundled")
    b = solve_lp(lp, backend="highs")
    assert a.status == b.status
    if a.status == OPTIMAL:
        assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_bounds_validation():
    lp = LinearProgram(2)
    with pytest.raises(ValueError):
        lp.set_bounds(0, 2.0, 1.0)
    with pytest.raises(ValueError):
        lp.add_constraint([(5, 1.0)], "<=", 0.0)
    with pytest.raises(ValueError):
        lp.add_constraint([(0, np.inf)], "<=", 0.0)
    with pytest.raises(ValueError):
        lp.add_constraint([(0, 1.0)], "<", 0.0)


def test_dump_format(tmp_path):
    lp = LinearProgram(2)
    lp.set_objective(0, 1.0)
    lp.add_constraint([(0, 1.0), (1, -2.0)], "<=", 3.0)
    path = tmp_path / "prog.lp"
    lp.dump(path)
    text = path.read_text()
    assert text.startswith("Maximize")
    assert "Subject To" in text and "Bounds" in text and text.rstrip().endswith("End")


def test_unknown_backend():
    with pytest.raises(ValueError):
        solve_lp(LinearProgram(1), backend="cplex")
